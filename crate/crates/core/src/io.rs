//! Canonical file formats: binary event files (with a CSV escape hatch),
//! pose JSON, grayscale PNG, raw float dumps, frame-time lists, and the
//! dataset manifest tying them together.

use crate::camera::{CameraView, Intrinsics};
use crate::error::{Error, Result};
use crate::event::{Event, EventStream};
use crate::grid::Grid;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

// Event file: magic "SWEV", version u32 LE, width u16, height u16,
// contrast threshold f32, count u64, then 16-byte records
// {t u64, x u16, y u16, p i8, pad 3 zero bytes}.
const EVENT_MAGIC: &[u8; 4] = b"SWEV";
const EVENT_VERSION: u32 = 1;

pub fn write_events_to(stream: &EventStream, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(EVENT_MAGIC)?;
    w.write_u32::<LittleEndian>(EVENT_VERSION)?;
    w.write_u16::<LittleEndian>(stream.width() as u16)?;
    w.write_u16::<LittleEndian>(stream.height() as u16)?;
    w.write_f32::<LittleEndian>(stream.contrast_threshold() as f32)?;
    w.write_u64::<LittleEndian>(stream.len() as u64)?;
    for e in stream.events() {
        w.write_u64::<LittleEndian>(e.t)?;
        w.write_u16::<LittleEndian>(e.x)?;
        w.write_u16::<LittleEndian>(e.y)?;
        w.write_i8(e.p)?;
        w.write_all(&[0u8; 3])?;
    }
    Ok(())
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    if stream.width() > u16::MAX as u32 || stream.height() > u16::MAX as u32 {
        return Err(Error::InvalidArgument(
            "event file resolution is limited to 16 bits per axis".into(),
        ));
    }
    let file = std::fs::File::create(path)
        .map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut buf = std::io::BufWriter::new(file);
    write_events_to(stream, &mut buf)
        .and_then(|_| buf.into_inner().map(|_| ()).map_err(|e| e.into_error()))
        .map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn read_events_from(mut r: impl Read, path: &Path) -> Result<EventStream> {
    let bad = |detail: String, offset: u64| Error::BadFormat {
        path: path.to_path_buf(),
        detail,
        offset,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated magic".into(), 0))?;
    if &magic != EVENT_MAGIC {
        return Err(bad("bad magic, expected \"SWEV\"".into(), 0));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|_| bad("truncated version".into(), 4))?;
    if version != EVENT_VERSION {
        return Err(bad(format!("unsupported version {version}"), 4));
    }
    let width = r
        .read_u16::<LittleEndian>()
        .map_err(|_| bad("truncated width".into(), 8))? as u32;
    let height = r
        .read_u16::<LittleEndian>()
        .map_err(|_| bad("truncated height".into(), 10))? as u32;
    let threshold = r
        .read_f32::<LittleEndian>()
        .map_err(|_| bad("truncated contrast threshold".into(), 12))? as f64;
    let count = r
        .read_u64::<LittleEndian>()
        .map_err(|_| bad("truncated count".into(), 16))?;
    let mut events = Vec::with_capacity(count.min(1 << 26) as usize);
    for i in 0..count {
        let offset = 24 + i * 16;
        let mut rec = [0u8; 16];
        r.read_exact(&mut rec)
            .map_err(|_| bad(format!("truncated record {i}"), offset))?;
        events.push(Event {
            t: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
            x: u16::from_le_bytes(rec[8..10].try_into().unwrap()),
            y: u16::from_le_bytes(rec[10..12].try_into().unwrap()),
            p: rec[12] as i8,
        });
    }
    EventStream::new(width, height, threshold, events)
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    read_events_from(std::io::BufReader::new(file), path)
}

/// CSV interop: one `t_us,x,y,p` line per event after a header line.
pub fn write_events_csv(path: &Path, stream: &EventStream) -> Result<()> {
    let mut out = String::from("t_us,x,y,p\n");
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p));
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

/// Reads the CSV form; geometry and threshold are not stored in the CSV and
/// must be supplied.
pub fn read_events_csv(
    path: &Path,
    width: u32,
    height: u32,
    contrast_threshold: f64,
) -> Result<EventStream> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut events = Vec::new();
    for (ln, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("read {}", path.display()), e))?;
        let line = line.trim();
        if line.is_empty() || (ln == 0 && line.starts_with("t_us")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::BadFormat {
            path: path.to_path_buf(),
            detail: format!("bad csv line {}: {line:?}", ln + 1),
            offset: ln as u64,
        };
        if fields.len() != 4 {
            return Err(bad());
        }
        events.push(Event {
            t: fields[0].trim().parse().map_err(|_| bad())?,
            x: fields[1].trim().parse().map_err(|_| bad())?,
            y: fields[2].trim().parse().map_err(|_| bad())?,
            p: fields[3].trim().parse().map_err(|_| bad())?,
        });
    }
    EventStream::new(width, height, contrast_threshold, events)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PoseRecord {
    pub t_us: u64,
    /// Row-major 3x3 world-to-camera rotation.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    /// World-to-camera translation.
    pub t: [f64; 3],
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PoseFile {
    pub intrinsics: Intrinsics,
    pub poses: Vec<PoseRecord>,
}

impl PoseFile {
    pub fn from_views(views: &[CameraView]) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::InvalidArgument("no poses".into()))?;
        Ok(PoseFile {
            intrinsics: first.intrinsics,
            poses: views
                .iter()
                .map(|v| PoseRecord {
                    t_us: v.timestamp,
                    r: [
                        v.rotation[(0, 0)],
                        v.rotation[(0, 1)],
                        v.rotation[(0, 2)],
                        v.rotation[(1, 0)],
                        v.rotation[(1, 1)],
                        v.rotation[(1, 2)],
                        v.rotation[(2, 0)],
                        v.rotation[(2, 1)],
                        v.rotation[(2, 2)],
                    ],
                    t: [v.translation.x, v.translation.y, v.translation.z],
                })
                .collect(),
        })
    }

    pub fn to_views(&self) -> Result<Vec<CameraView>> {
        self.intrinsics.validate()?;
        Ok(self
            .poses
            .iter()
            .map(|p| CameraView {
                rotation: Matrix3::new(
                    p.r[0], p.r[1], p.r[2], p.r[3], p.r[4], p.r[5], p.r[6], p.r[7], p.r[8],
                ),
                translation: Vector3::new(p.t[0], p.t[1], p.t[2]),
                timestamp: p.t_us,
                intrinsics: self.intrinsics,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// 8-bit grayscale PNG with values clamped to [0,1].
pub fn save_grayscale_png(path: &Path, grid: &Grid) -> Result<()> {
    let mut img = image::GrayImage::new(grid.width(), grid.height());
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            let v = (grid.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(x, y, image::Luma([v]));
        }
    }
    img.save(path)?;
    Ok(())
}

pub fn load_grayscale_png(path: &Path) -> Result<Grid> {
    let img = image::open(path)?.into_luma8();
    Ok(Grid::from_fn(img.width(), img.height(), |x, y| {
        img.get_pixel(x, y).0[0] as f64 / 255.0
    }))
}

/// Raw float32 dump, little-endian, row-major, exactly W*H values.
pub fn write_grid_f32(path: &Path, grid: &Grid) -> Result<()> {
    let mut bytes = Vec::with_capacity(grid.len() * 4);
    for &v in grid.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn read_grid_f32(path: &Path, width: u32, height: u32) -> Result<Grid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let expected = width as usize * height as usize * 4;
    if bytes.len() != expected {
        return Err(Error::BadFormat {
            path: path.to_path_buf(),
            detail: format!("expected {expected} bytes, found {}", bytes.len()),
            offset: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Grid::from_vec(width, height, data))
}

/// Frame-time list: one integer microsecond timestamp per line.
pub fn write_times(path: &Path, times: &[u64]) -> Result<()> {
    let text: String = times.iter().map(|t| format!("{t}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(format!("write {}", path.display()), e))
}

pub fn read_times(path: &Path) -> Result<Vec<u64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::BadFormat {
                path: path.to_path_buf(),
                detail: format!("bad timestamp on line {}", i + 1),
                offset: i as u64,
            })
        })
        .collect()
}

/// Dataset manifest referencing the pieces of one captured or simulated
/// sweep. Relative paths are resolved against the manifest's directory.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub events: PathBuf,
    pub poses: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_frame: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_frames_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_times: Option<PathBuf>,
    pub resolution: (u32, u32),
    pub contrast_threshold: f64,
}

/// Everything a training run needs, loaded and cross-validated.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub stream: EventStream,
    pub views: Vec<CameraView>,
    pub initial_frame: Option<Grid>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(format!("write {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("open {}", path.display()), e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        manifest.events = resolve(&manifest.events);
        manifest.poses = resolve(&manifest.poses);
        manifest.initial_frame = manifest.initial_frame.as_ref().map(&resolve);
        manifest.gt_frames_dir = manifest.gt_frames_dir.as_ref().map(&resolve);
        manifest.gt_times = manifest.gt_times.as_ref().map(&resolve);
        Ok(manifest)
    }

    /// Loads and validates every referenced file, rejecting resolution
    /// mismatches before any compute starts.
    pub fn open(&self) -> Result<LoadedDataset> {
        let stream = read_events(&self.events)?;
        if stream.resolution() != self.resolution {
            return Err(Error::ManifestInvalid(format!(
                "event file resolution {:?} != manifest {:?}",
                stream.resolution(),
                self.resolution
            )));
        }
        if (stream.contrast_threshold() - self.contrast_threshold).abs() > 1e-6 {
            return Err(Error::ManifestInvalid(format!(
                "event file contrast threshold {} != manifest {}",
                stream.contrast_threshold(),
                self.contrast_threshold
            )));
        }
        let pose_file = PoseFile::load(&self.poses)?;
        if (pose_file.intrinsics.width, pose_file.intrinsics.height) != self.resolution {
            return Err(Error::ManifestInvalid(format!(
                "pose intrinsics {}x{} != manifest resolution {:?}",
                pose_file.intrinsics.width, pose_file.intrinsics.height, self.resolution
            )));
        }
        let views = pose_file.to_views()?;
        if views.len() < 2 {
            return Err(Error::ManifestInvalid("need at least 2 poses".into()));
        }
        if views.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(Error::ManifestInvalid(
                "pose timestamps must be strictly increasing".into(),
            ));
        }
        let initial_frame = match &self.initial_frame {
            Some(p) => {
                let frame = load_grayscale_png(p)?;
                if frame.resolution() != self.resolution {
                    return Err(Error::ManifestInvalid(format!(
                        "initial frame resolution {:?} != manifest {:?}",
                        frame.resolution(),
                        self.resolution
                    )));
                }
                Some(frame)
            }
            None => None,
        };
        if let Some(times) = &self.gt_times {
            let n = read_times(times)?.len();
            let dir = self.gt_frames_dir.as_ref().ok_or_else(|| {
                Error::ManifestInvalid("gt_times given without gt_frames_dir".into())
            })?;
            for i in 0..n {
                let p = frame_path(dir, i);
                if !p.exists() {
                    return Err(Error::ManifestInvalid(format!(
                        "missing ground-truth frame {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(LoadedDataset {
            manifest: self.clone(),
            stream,
            views,
            initial_frame,
        })
    }
}

/// Canonical numbered frame filename inside a frame directory.
pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:05}.png"))
}
