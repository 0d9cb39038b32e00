//! On-disk formats: scene directories, distilled fields, keypoint files,
//! traces, images and point snapshots. Every write goes through a temporary
//! file in the target directory followed by a rename.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::distill::SmoothedField;
use crate::error::{Error, Result};
use crate::fields::{DensityScene, DensitySource, GridSpec, Primitive, Rendering, RgbGrid, ScalarGrid, SurfaceFieldGrid};
use crate::geometry::{triangulate_keypoints, Click, PinholeCamera, Vec3};
use crate::registration::TraceRecord;

pub const SCENE_MANIFEST: &str = "scene.json";
pub const DENSITY_FILE: &str = "density.raw";
pub const RGB_FILE: &str = "rgb.raw";
pub const SURFACE_DIR: &str = "surface";
pub const SURFACE_MANIFEST: &str = "surface.json";
pub const SURFACE_FILE: &str = "surface.raw";
pub const KEYPOINTS_FILE: &str = "keypoints.json";

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` by renaming a fully written sibling file over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Io(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        name.to_string_lossy(),
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Manifest(format!("{} not found", path.display())))
        }
        Err(e) => return Err(Error::Io(format!("{}: {e}", path.display()))),
    };
    serde_json::from_slice(&bytes).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Manifest(format!("raw length {} is not a multiple of 4", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// A raw x-fastest grid of `channels` interleaved values per node.
fn read_raw(path: &Path, spec: &GridSpec, channels: usize) -> Result<Vec<f32>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Manifest(format!("{} not found", path.display())))
        }
        Err(e) => return Err(Error::Io(format!("{}: {e}", path.display()))),
    };
    let values = f32_from_le_bytes(&bytes)?;
    if values.len() != spec.len() * channels {
        return Err(Error::Manifest(format!(
            "{} holds {} values, grid needs {}",
            path.display(),
            values.len(),
            spec.len() * channels
        )));
    }
    Ok(values)
}

fn default_background() -> [f64; 3] {
    [0.0; 3]
}

/// Contents of `scene.json`. Exactly one of `grid` and `analytic` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<Primitive>,
    pub cameras: Vec<PinholeCamera>,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
}

impl SceneManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let m: SceneManifest = parse_json(&dir.join(SCENE_MANIFEST))?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Manifest(format!("radius must be positive, got {}", self.radius)));
        }
        match (&self.grid, &self.analytic) {
            (Some(_), Some(_)) => Err(Error::Manifest("both grid and analytic given".into())),
            (None, None) => Err(Error::Manifest("one of grid or analytic is required".into())),
            (Some(g), None) if g.is_empty() => Err(Error::Manifest("grid has no nodes".into())),
            _ => Ok(()),
        }
    }
}

pub fn load_scene(dir: &Path) -> Result<DensityScene> {
    let m = SceneManifest::load(dir)?;
    let source = match (m.grid, m.analytic) {
        (Some(spec), _) => {
            let density = ScalarGrid {
                spec,
                values: read_raw(&dir.join(DENSITY_FILE), &spec, 1)?,
            };
            let rgb_path = dir.join(RGB_FILE);
            let rgb = if rgb_path.exists() {
                let v = read_raw(&rgb_path, &spec, 3)?;
                Some(RgbGrid {
                    spec,
                    values: v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                })
            } else {
                None
            };
            DensitySource::Grid { density, rgb }
        }
        (None, Some(p)) => DensitySource::Analytic(p),
        (None, None) => unreachable!("validated"),
    };
    Ok(DensityScene {
        radius: m.radius,
        source,
        cameras: m.cameras,
        background: m.background,
    })
}

pub fn save_scene(dir: &Path, scene: &DensityScene) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (grid, analytic) = match &scene.source {
        DensitySource::Grid { density, rgb } => {
            write_atomic(&dir.join(DENSITY_FILE), &f32_to_le_bytes(&density.values))?;
            if let Some(rgb) = rgb {
                let flat: Vec<f32> = rgb.values.iter().flatten().copied().collect();
                write_atomic(&dir.join(RGB_FILE), &f32_to_le_bytes(&flat))?;
            }
            (Some(density.spec), None)
        }
        DensitySource::Analytic(p) => (None, Some(p.clone())),
    };
    write_json(
        &dir.join(SCENE_MANIFEST),
        &SceneManifest {
            radius: scene.radius,
            grid,
            analytic,
            cameras: scene.cameras.clone(),
            background: scene.background,
        },
    )
}

/// One smoothed level in `surface.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub sigma: f64,
    pub file: String,
    /// Monte-Carlo samples per node; `None` for the exact convolution.
    pub n: Option<usize>,
    pub seed: u64,
}

/// Contents of `surface/surface.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceManifest {
    pub grid: GridSpec,
    pub epsilon: f64,
    pub delta: f64,
    pub step: f64,
    pub surface: String,
    pub levels: Vec<LevelEntry>,
}

impl SurfaceManifest {
    pub fn sigmas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.sigma).collect()
    }
}

/// A scene's distilled fields as stored under `surface/`.
#[derive(Debug, Clone)]
pub struct Distilled {
    pub manifest: SurfaceManifest,
    pub surface: SurfaceFieldGrid,
    pub levels: Vec<SmoothedField>,
}

pub fn level_file(index: usize) -> String {
    format!("sigma_{index}.raw")
}

/// Writes the surface grid and one raw file per smoothed level. Levels must
/// be grid-backed.
pub fn save_distilled(scene_dir: &Path, step: f64, surface: &SurfaceFieldGrid, levels: &[SmoothedField], seed: u64) -> Result<SurfaceManifest> {
    let dir = scene_dir.join(SURFACE_DIR);
    fs::create_dir_all(&dir)?;
    write_atomic(&dir.join(SURFACE_FILE), &f32_to_le_bytes(&surface.grid.values))?;
    let mut entries = Vec::with_capacity(levels.len());
    for (i, level) in levels.iter().enumerate() {
        let grid = level
            .grid()
            .ok_or_else(|| Error::InvalidInput("only grid-backed fields can be stored".into()))?;
        let file = level_file(i);
        write_atomic(&dir.join(&file), &f32_to_le_bytes(&grid.values))?;
        entries.push(LevelEntry {
            sigma: level.sigma,
            file,
            n: None,
            seed,
        });
    }
    let manifest = SurfaceManifest {
        grid: surface.grid.spec,
        epsilon: surface.epsilon,
        delta: surface.delta,
        step,
        surface: SURFACE_FILE.to_string(),
        levels: entries,
    };
    write_json(&dir.join(SURFACE_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_distilled(scene_dir: &Path) -> Result<Distilled> {
    let dir = scene_dir.join(SURFACE_DIR);
    let manifest: SurfaceManifest = parse_json(&dir.join(SURFACE_MANIFEST))?;
    let spec = manifest.grid;
    let surface = SurfaceFieldGrid {
        grid: ScalarGrid {
            spec,
            values: read_raw(&dir.join(&manifest.surface), &spec, 1)?,
        },
        epsilon: manifest.epsilon,
        delta: manifest.delta,
    };
    let levels = manifest
        .levels
        .iter()
        .map(|l| {
            let values = read_raw(&dir.join(&l.file), &spec, 1)?;
            Ok(SmoothedField::from_grid(l.sigma, ScalarGrid { spec, values }))
        })
        .collect::<Result<_>>()?;
    Ok(Distilled {
        manifest,
        surface,
        levels,
    })
}

/// One scene's keypoints: 2D clicks per keypoint, or 3D points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKeypoints {
    Clicks(Vec<Vec<Click>>),
    Points(Vec<[f64; 3]>),
}

impl SceneKeypoints {
    pub fn len(&self) -> usize {
        match self {
            SceneKeypoints::Clicks(c) => c.len(),
            SceneKeypoints::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// 3D keypoints, triangulating clicks with the scene's cameras.
    pub fn resolve(&self, cameras: &[PinholeCamera]) -> Result<Vec<Vec3>> {
        match self {
            SceneKeypoints::Clicks(c) => triangulate_keypoints(c, cameras),
            SceneKeypoints::Points(p) => Ok(p.iter().map(|q| Vec3::new(q[0], q[1], q[2])).collect()),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse_json(path)
    }
}

/// The keypoints of a scene pair, matched by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointFile {
    pub a: SceneKeypoints,
    pub b: SceneKeypoints,
}

impl KeypointFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: KeypointFile = parse_json(path)?;
        if f.a.len() != f.b.len() {
            return Err(Error::KeypointCountMismatch { a: f.a.len(), b: f.b.len() });
        }
        Ok(f)
    }
}

/// One JSON object per line.
pub fn trace_to_ndjson(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_ndjson_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::InvalidInput(format!("trace line: {e}"))))
        .collect()
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit RGB pixels of a rendering. Scenes without emission show white
/// weighted by opacity over the background.
pub fn rendering_rgb8(r: &Rendering, background: [f64; 3]) -> Vec<u8> {
    let n = (r.width * r.height) as usize;
    let mut out = Vec::with_capacity(3 * n);
    for p in 0..n {
        let px = match &r.rgb {
            Some(rgb) => rgb[p],
            None => {
                let o = r.opacity[p];
                background.map(|b| o + (1.0 - o) * b)
            }
        };
        out.extend(px.map(to_u8));
    }
    out
}

pub fn encode_png(r: &Rendering, background: [f64; 3]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut bytes);
    image::ImageEncoder::write_image(
        encoder,
        &rendering_rgb8(r, background),
        r.width,
        r.height,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Io(e.to_string()))?;
    Ok(bytes)
}

/// Single-channel little-endian PFM, rows bottom to top. Pixels without a
/// depth are written as 0.
pub fn encode_depth_pfm(r: &Rendering) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", r.width, r.height).into_bytes();
    for j in (0..r.height).rev() {
        for i in 0..r.width {
            out.extend((r.depth_at(i, j).unwrap_or(0.0) as f32).to_le_bytes());
        }
    }
    out
}

/// Parses a single-channel PFM into row-major rows, top to bottom.
pub fn decode_pfm(bytes: &[u8]) -> Result<(u32, u32, Vec<f32>)> {
    let bad = |m: &str| Error::InvalidInput(format!("pfm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad("only single-channel files are supported"));
    }
    let w: u32 = fields[1].parse().map_err(|_| bad("width"))?;
    let h: u32 = fields[2].parse().map_err(|_| bad("height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("scale"))?;
    if scale >= 0.0 {
        return Err(bad("big-endian files are not supported"));
    }
    let data = bytes.get(pos..).ok_or_else(|| bad("no data"))?;
    let values = f32_from_le_bytes(data)?;
    if values.len() != (w * h) as usize {
        return Err(bad("size mismatch"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for j in (0..h as usize).rev() {
        rows.extend_from_slice(&values[j * w as usize..(j + 1) * w as usize]);
    }
    Ok((w, h, rows))
}

/// Point list: a little-endian u32 count followed by x, y, z as f32.
pub fn encode_points(points: &[Vec3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 12 * points.len());
    out.extend((points.len() as u32).to_le_bytes());
    for p in points {
        for c in p.iter() {
            out.extend((*c as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<Vec3>> {
    let head: [u8; 4] = bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::InvalidInput("point file too short".into()))?;
    let n = u32::from_le_bytes(head) as usize;
    let values = f32_from_le_bytes(&bytes[4..])?;
    if values.len() != 3 * n {
        return Err(Error::InvalidInput(format!("point file declares {n} points, holds {}", values.len() / 3)));
    }
    Ok(values
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect())
}

/// Scene directories under `root`, sorted by name.
pub fn list_scenes(root: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.path().join(SCENE_MANIFEST).is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// `root/id`, rejecting ids that would escape `root`.
pub fn scene_path(root: &Path, id: &str) -> Option<PathBuf> {
    let ok = !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\']);
    ok.then(|| root.join(id))
}
