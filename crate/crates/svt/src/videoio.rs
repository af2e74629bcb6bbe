//! Raw video container, bit-exact on-disk format, and the synthetic
//! labeled-motion generator that stands in for a real video corpus.
//!
//! Videos are uncompressed 8-bit RGB. The generator renders a filled square
//! translating at constant speed along one axis; the four motion classes
//! differ only in direction, so a single frame carries no class information
//! and any classifier has to read motion.

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use ndarray::Array4;
use rand::Rng;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"SVTV";
const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 24;

/// Uncompressed video: (frames, height, width, channels) of u8, channels = 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawVideo {
    frames: Array4<u8>,
}

impl RawVideo {
    /// Wrap a (N, H, W, 3) array. Rejects empty axes and non-RGB channel
    /// counts; those cannot occur in files this crate writes.
    pub fn new(frames: Array4<u8>) -> Result<Self> {
        let (n, h, w, c) = frames.dim();
        if n == 0 {
            return Err(Error::EmptyVideo);
        }
        if h == 0 {
            return Err(Error::ZeroDimension("height"));
        }
        if w == 0 {
            return Err(Error::ZeroDimension("width"));
        }
        if c != 3 {
            return Err(Error::ChannelCount(c as u32));
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Array4<u8> {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.dim().0
    }

    pub fn height(&self) -> usize {
        self.frames.dim().1
    }

    pub fn width(&self) -> usize {
        self.frames.dim().2
    }
}

/// Write the `.svtvid` container: 24-byte little-endian header
/// (magic `SVTV`, version u16, reserved u16, then N, H, W, C as u32),
/// followed by N*H*W*C payload bytes in (frame, row, column, channel) order.
pub fn write_raw_video(video: &RawVideo, path: &Path) -> Result<()> {
    let (n, h, w, c) = video.frames.dim();
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&MAGIC)?;
    file.write_all(&FORMAT_VERSION.to_le_bytes())?;
    file.write_all(&0u16.to_le_bytes())?;
    for dim in [n, h, w, c] {
        file.write_all(&(dim as u32).to_le_bytes())?;
    }
    let frames = video
        .frames
        .as_slice()
        .expect("RawVideo frames are standard layout");
    file.write_all(frames)?;
    file.flush()?;
    Ok(())
}

/// Read a `.svtvid` file written by [`write_raw_video`].
pub fn read_raw_video(path: &Path) -> Result<RawVideo> {
    let mut file = std::io::BufReader::new(fs::File::open(path)?);
    let mut header = [0u8; HEADER_LEN];
    file.read_exact(&mut header).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::BadMagic
        } else {
            Error::Io(e)
        }
    })?;
    if header[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let (n, h, w, c) = (word(8), word(12), word(16), word(20));
    if n == 0 {
        return Err(Error::EmptyVideo);
    }
    if h == 0 {
        return Err(Error::ZeroDimension("height"));
    }
    if w == 0 {
        return Err(Error::ZeroDimension("width"));
    }
    if c != 3 {
        return Err(Error::ChannelCount(c));
    }
    let expected = n as usize * h as usize * w as usize * c as usize;
    let mut payload = Vec::with_capacity(expected);
    file.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Dataset(format!(
            "trailing bytes after payload: expected {expected}, found {}",
            payload.len()
        )));
    }
    let frames =
        Array4::from_shape_vec((n as usize, h as usize, w as usize, c as usize), payload)
            .expect("payload length checked");
    RawVideo::new(frames)
}

/// The four synthetic motion classes. Index order is stable and used as the
/// dataset label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MotionClass {
    MoveRight,
    MoveLeft,
    MoveDown,
    MoveUp,
}

impl MotionClass {
    pub const ALL: [MotionClass; 4] = [
        MotionClass::MoveRight,
        MotionClass::MoveLeft,
        MotionClass::MoveDown,
        MotionClass::MoveUp,
    ];

    pub fn index(self) -> usize {
        match self {
            MotionClass::MoveRight => 0,
            MotionClass::MoveLeft => 1,
            MotionClass::MoveDown => 2,
            MotionClass::MoveUp => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::MoveRight => "move-right",
            MotionClass::MoveLeft => "move-left",
            MotionClass::MoveDown => "move-down",
            MotionClass::MoveUp => "move-up",
        }
    }

    /// True when motion is along x (right/left); false for y (down/up).
    fn horizontal(self) -> bool {
        matches!(self, MotionClass::MoveRight | MotionClass::MoveLeft)
    }

    /// +1 along the motion axis for right/down, -1 for left/up.
    fn sign(self) -> f64 {
        match self {
            MotionClass::MoveRight | MotionClass::MoveDown => 1.0,
            MotionClass::MoveLeft | MotionClass::MoveUp => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundStyle {
    Solid,
    Noise,
    Gradient,
}

/// Everything that determines a synthetic video, including the seed:
/// generation is a pure function of this struct.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub motion_class: MotionClass,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub object_size: usize,
    /// Pixels per frame along the motion axis; may be fractional.
    pub speed: f64,
    pub background_style: BackgroundStyle,
    pub seed: u64,
}

/// Render the moving-square video described by `spec`.
///
/// The returned label is `spec.motion_class.index()`. The object's centroid
/// displacement between first and last frame is `speed * (n_frames - 1)`
/// along the class axis, within one pixel of rounding. Classes that mirror
/// each other (up/down, left/right) produce mirrored trajectories for the
/// same seed because every random draw happens before the direction is
/// applied.
pub fn generate_synthetic_video(spec: &SyntheticSpec) -> Result<(RawVideo, usize)> {
    let (h, w) = (spec.height, spec.width);
    if spec.n_frames == 0 {
        return Err(Error::EmptyVideo);
    }
    if h == 0 {
        return Err(Error::ZeroDimension("height"));
    }
    if w == 0 {
        return Err(Error::ZeroDimension("width"));
    }
    let along_extent = if spec.motion_class.horizontal() { w } else { h };
    let perp_extent = if spec.motion_class.horizontal() { h } else { w };
    let span = spec.speed * (spec.n_frames - 1) as f64;
    if span + spec.object_size as f64 > along_extent as f64 {
        return Err(Error::TrajectoryExit {
            span: span + spec.object_size as f64,
            extent: along_extent,
        });
    }
    if spec.object_size > perp_extent || spec.object_size == 0 {
        return Err(Error::TrajectoryExit {
            span: spec.object_size as f64,
            extent: perp_extent,
        });
    }

    // All draws are class-independent so that mirror classes share geometry.
    let mut rng = rng::stream(spec.seed, &[purpose::DATAGEN]);
    let background = render_background(&mut rng, spec.background_style, h, w);
    let object_color = draw_object_color(&mut rng, spec.background_style, &background);
    let along_slack = along_extent as f64 - span - spec.object_size as f64;
    let along_start: f64 = rng.random::<f64>() * along_slack;
    let perp_slack = (perp_extent - spec.object_size) as f64;
    let perp_pos: f64 = rng.random::<f64>() * perp_slack;
    let perp0 = perp_pos.round() as usize;

    // Positive-direction trajectory starts at the canonical draw; the
    // mirrored class reflects it across the frame.
    let start = if spec.motion_class.sign() > 0.0 {
        along_start
    } else {
        along_extent as f64 - spec.object_size as f64 - along_start
    };

    let mut frames = Array4::<u8>::zeros((spec.n_frames, h, w, 3));
    for t in 0..spec.n_frames {
        let mut frame = frames.index_axis_mut(ndarray::Axis(0), t);
        frame.assign(&background);
        let along = start + spec.motion_class.sign() * spec.speed * t as f64;
        let a0 = along.round() as usize;
        let (y0, x0) = if spec.motion_class.horizontal() {
            (perp0, a0)
        } else {
            (a0, perp0)
        };
        for y in y0..y0 + spec.object_size {
            for x in x0..x0 + spec.object_size {
                for (ch, &v) in object_color.iter().enumerate() {
                    frame[[y, x, ch]] = v;
                }
            }
        }
    }
    Ok((RawVideo::new(frames)?, spec.motion_class.index()))
}

fn render_background(
    rng: &mut rand_chacha::ChaCha12Rng,
    style: BackgroundStyle,
    h: usize,
    w: usize,
) -> ndarray::Array3<u8> {
    let mut bg = ndarray::Array3::<u8>::zeros((h, w, 3));
    match style {
        BackgroundStyle::Solid => {
            let color: [u8; 3] = [rng.random(), rng.random(), rng.random()];
            for mut px in bg.rows_mut() {
                px[0] = color[0];
                px[1] = color[1];
                px[2] = color[2];
            }
        }
        BackgroundStyle::Noise => {
            for v in bg.iter_mut() {
                *v = rng.random();
            }
        }
        BackgroundStyle::Gradient => {
            let c0: [u8; 3] = [rng.random(), rng.random(), rng.random()];
            let c1: [u8; 3] = [rng.random(), rng.random(), rng.random()];
            for x in 0..w {
                let t = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
                for ch in 0..3 {
                    let v = c0[ch] as f64 + (c1[ch] as f64 - c0[ch] as f64) * t;
                    let v = v.round() as u8;
                    for y in 0..h {
                        bg[[y, x, ch]] = v;
                    }
                }
            }
        }
    }
    bg
}

/// Pick an object color clearly distinct from a solid background so the
/// object is never invisible; other styles take any color.
fn draw_object_color(
    rng: &mut rand_chacha::ChaCha12Rng,
    style: BackgroundStyle,
    background: &ndarray::Array3<u8>,
) -> [u8; 3] {
    loop {
        let color: [u8; 3] = [rng.random(), rng.random(), rng.random()];
        if style != BackgroundStyle::Solid {
            return color;
        }
        let bg = [background[[0, 0, 0]], background[[0, 0, 1]], background[[0, 0, 2]]];
        let dist = color
            .iter()
            .zip(bg.iter())
            .map(|(&a, &b)| (a as i32 - b as i32).abs())
            .max()
            .unwrap();
        if dist >= 32 {
            return color;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().expect("tempdir")
    }

    fn sample_video() -> RawVideo {
        let frames = Array4::from_shape_fn((16, 32, 32, 3), |(n, y, x, c)| {
            ((n * 7 + y * 3 + x * 5 + c * 11) % 256) as u8
        });
        RawVideo::new(frames).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tmpdir();
        let path = dir.path().join("v.svtvid");
        let video = sample_video();
        write_raw_video(&video, &path).unwrap();
        let back = read_raw_video(&path).unwrap();
        assert_eq!(video, back);
    }

    #[test]
    fn header_is_24_bytes_and_payload_exact() {
        let dir = tmpdir();
        let path = dir.path().join("v.svtvid");
        write_raw_video(&sample_video(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 24 + 16 * 32 * 32 * 3);
        assert_eq!(bytes.len(), 24 + 49152);
        assert_eq!(&bytes[0..4], b"SVTV");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 0);
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        assert_eq!([word(8), word(12), word(16), word(20)], [16, 32, 32, 3]);
    }

    #[test]
    fn payload_byte_order_is_frame_row_col_channel() {
        let dir = tmpdir();
        let path = dir.path().join("v.svtvid");
        let mut frames = Array4::<u8>::zeros((2, 2, 2, 3));
        frames[[0, 0, 0, 0]] = 10; // first payload byte
        frames[[0, 0, 0, 2]] = 12; // third byte: channel fastest
        frames[[0, 0, 1, 0]] = 20; // fourth byte: then column
        frames[[0, 1, 0, 0]] = 30; // then row
        frames[[1, 0, 0, 0]] = 40; // then frame
        write_raw_video(&RawVideo::new(frames).unwrap(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let p = &bytes[24..];
        assert_eq!(p[0], 10);
        assert_eq!(p[2], 12);
        assert_eq!(p[3], 20);
        assert_eq!(p[6], 30);
        assert_eq!(p[12], 40);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("v.svtvid");
        write_raw_video(&sample_video(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        let err = read_raw_video(&path).unwrap_err();
        assert!(err.to_string().contains("truncated payload"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("v.svtvid");
        write_raw_video(&sample_video(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        let err = read_raw_video(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn zero_frame_header_is_rejected() {
        let dir = tmpdir();
        let path = dir.path().join("v.svtvid");
        write_raw_video(&sample_video(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_raw_video(&path).unwrap_err();
        assert!(err.to_string().contains("empty video"), "{err}");
    }

    /// Brute-force object centroid oracle, independent of the generator's
    /// internals: the background is static, so the temporal mode of each
    /// pixel across frames recovers it for every background style (the
    /// object covers any one pixel in fewer than half the frames when
    /// speed * n_frames comfortably exceeds object_size). Object pixels in
    /// frame `t` are those differing from that background; their average
    /// position is the centroid.
    fn object_centroid(video: &RawVideo, t: usize) -> (f64, f64) {
        use std::collections::HashMap;
        let frames = video.frames();
        let (n, h, w, _) = frames.dim();
        let frame = frames.index_axis(ndarray::Axis(0), t);
        let (mut sy, mut sx, mut count) = (0.0, 0.0, 0usize);
        for y in 0..h {
            for x in 0..w {
                let mut votes: HashMap<[u8; 3], usize> = HashMap::new();
                for f in 0..n {
                    *votes
                        .entry([frames[[f, y, x, 0]], frames[[f, y, x, 1]], frames[[f, y, x, 2]]])
                        .or_default() += 1;
                }
                let bg = *votes.iter().max_by_key(|(_, &c)| c).unwrap().0;
                let px = [frame[[y, x, 0]], frame[[y, x, 1]], frame[[y, x, 2]]];
                if px != bg {
                    sy += y as f64;
                    sx += x as f64;
                    count += 1;
                }
            }
        }
        assert!(count > 0, "no object pixels found in frame {t}");
        (sy / count as f64, sx / count as f64)
    }

    fn spec(class: MotionClass, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            motion_class: class,
            n_frames: 16,
            height: 64,
            width: 64,
            object_size: 8,
            speed: 2.0,
            background_style: BackgroundStyle::Solid,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = spec(MotionClass::MoveRight, 99);
        let (a, label_a) = generate_synthetic_video(&s).unwrap();
        let (b, label_b) = generate_synthetic_video(&s).unwrap();
        assert_eq!(a, b);
        assert_eq!(label_a, label_b);
        assert_eq!(label_a, 0);
    }

    #[test]
    fn move_right_speed2_displaces_30px() {
        for seed in [0, 1, 2, 3, 4] {
            let (video, _) = generate_synthetic_video(&spec(MotionClass::MoveRight, seed)).unwrap();
            let first = object_centroid(&video, 0);
            let last = object_centroid(&video, 15);
            let dx = last.1 - first.1;
            let dy = last.0 - first.0;
            assert!((dx - 30.0).abs() <= 1.0, "dx = {dx} (seed {seed})");
            assert!(dy.abs() <= 1.0, "dy = {dy} (seed {seed})");
        }
    }

    #[test]
    fn up_and_down_are_vertical_mirrors() {
        for seed in [7, 8, 9] {
            let (down, _) = generate_synthetic_video(&spec(MotionClass::MoveDown, seed)).unwrap();
            let (up, _) = generate_synthetic_video(&spec(MotionClass::MoveUp, seed)).unwrap();
            let h = 64.0 - 1.0;
            for t in [0usize, 7, 15] {
                let cd = object_centroid(&down, t);
                let cu = object_centroid(&up, t);
                assert!(
                    (cu.0 - (h - cd.0)).abs() <= 1.0,
                    "frame {t}: up y {} vs mirrored down y {} (seed {seed})",
                    cu.0,
                    h - cd.0
                );
                assert!((cu.1 - cd.1).abs() <= 1.0, "x drifted between mirror classes");
            }
        }
    }

    #[test]
    fn displacement_sign_identifies_class_100_of_100() {
        for class in MotionClass::ALL {
            for i in 0..100u64 {
                let s = SyntheticSpec {
                    motion_class: class,
                    n_frames: 12,
                    height: 40,
                    width: 40,
                    object_size: 5,
                    speed: 2.0,
                    background_style: match i % 3 {
                        0 => BackgroundStyle::Solid,
                        1 => BackgroundStyle::Noise,
                        _ => BackgroundStyle::Gradient,
                    },
                    seed: 1000 + i,
                };
                let (video, label) = generate_synthetic_video(&s).unwrap();
                assert_eq!(label, class.index());
                let c0 = object_centroid(&video, 0);
                let c1 = object_centroid(&video, 11);
                let (dy, dx) = (c1.0 - c0.0, c1.1 - c0.1);
                let predicted = if dx.abs() >= dy.abs() {
                    if dx > 0.0 {
                        MotionClass::MoveRight
                    } else {
                        MotionClass::MoveLeft
                    }
                } else if dy > 0.0 {
                    MotionClass::MoveDown
                } else {
                    MotionClass::MoveUp
                };
                assert_eq!(predicted, class, "seed {}", s.seed);
            }
        }
    }

    #[test]
    fn trajectory_exit_is_rejected() {
        let mut s = spec(MotionClass::MoveRight, 0);
        s.speed = 10.0; // 10 * 15 + 8 > 64
        let err = generate_synthetic_video(&s).unwrap_err();
        assert!(err.to_string().contains("trajectory would exit frame"), "{err}");
    }
}
