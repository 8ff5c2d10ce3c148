use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;

pub const MANIFEST_VERSION: u32 = 1;

/// Millimetres per pixel, either one number or an `[x, y]` pair. Pairs must
/// be equal: only isotropic spacing is supported.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PixelSpacing {
    Isotropic(f64),
    PerAxis([f64; 2]),
}

impl PixelSpacing {
    pub fn mm(&self) -> Option<f64> {
        match *self {
            PixelSpacing::Isotropic(s) => Some(s),
            PixelSpacing::PerAxis([x, y]) => {
                ((x - y).abs() <= 1e-9 * x.abs().max(y.abs())).then_some(x)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    /// Position in the source video; strictly increasing within a clip.
    pub index: u32,
    pub path: PathBuf,
    pub label: ClassLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub clip_id: String,
    pub pixel_spacing_mm: PixelSpacing,
    pub frames: Vec<FrameRecord>,
}

impl ManifestEntry {
    pub fn spacing_mm(&self) -> f64 {
        self.pixel_spacing_mm
            .mm()
            .expect("validated manifests have isotropic spacing")
    }
}

/// A validated list of clips. Relative paths resolve against `root`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            version: MANIFEST_VERSION,
            entries,
            root: root.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn frame_count(&self) -> usize {
        self.entries.iter().map(|e| e.frames.len()).sum()
    }

    /// Check every schema invariant, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest {
                entry: 0,
                field: "version".into(),
                message: format!("unsupported version {}", self.version),
            });
        }
        for (i, e) in self.entries.iter().enumerate() {
            let err = |field: String, message: String| Error::Manifest {
                entry: i,
                field,
                message,
            };
            if e.patient_id.trim().is_empty() {
                return Err(err("patient_id".into(), "must be nonempty".into()));
            }
            if e.clip_id.trim().is_empty() {
                return Err(err("clip_id".into(), "must be nonempty".into()));
            }
            match e.pixel_spacing_mm.mm() {
                None => {
                    return Err(err(
                        "pixel_spacing_mm".into(),
                        format!("anisotropic spacing {:?} is not supported", e.pixel_spacing_mm),
                    ))
                }
                Some(s) if !(s > 0.0 && s.is_finite()) => {
                    return Err(err("pixel_spacing_mm".into(), format!("must be positive, got {s}")))
                }
                _ => {}
            }
            if e.frames.is_empty() {
                return Err(err("frames".into(), "clip has no frames".into()));
            }
            for (j, f) in e.frames.iter().enumerate() {
                if j > 0 && f.index <= e.frames[j - 1].index {
                    return Err(err(
                        format!("frames[{j}].index"),
                        format!(
                            "frame order must strictly increase ({} after {})",
                            f.index,
                            e.frames[j - 1].index
                        ),
                    ));
                }
                if f.label.is_foreground() && f.mask.is_none() {
                    return Err(err(
                        format!("frames[{j}].mask"),
                        format!("{} frame {} has no mask", f.label, f.index),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
    m.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    m.validate()?;
    Ok(m)
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(frames: Vec<FrameRecord>) -> ManifestEntry {
        ManifestEntry {
            patient_id: "p0".into(),
            clip_id: "c0".into(),
            pixel_spacing_mm: PixelSpacing::Isotropic(0.2),
            frames,
        }
    }

    fn frame(index: u32, label: ClassLabel, mask: bool) -> FrameRecord {
        FrameRecord {
            index,
            path: format!("f{index}.png").into(),
            label,
            mask: mask.then(|| format!("m{index}.png").into()),
        }
    }

    #[test]
    fn minimal_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let frames = (0..5).map(|i| frame(i, ClassLabel::Head, true)).collect();
        let m = DatasetManifest::new(vec![entry(frames)], dir.path());
        let path = dir.path().join("manifest.json");
        save_manifest(&path, &m).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.entries.len(), 1);
    }

    #[test]
    fn missing_mask_names_the_frame() {
        let frames = vec![frame(0, ClassLabel::Background, false), frame(1, ClassLabel::Femur, false)];
        let err = DatasetManifest::new(vec![entry(frames)], ".").validate().unwrap_err();
        match err {
            Error::Manifest { entry, field, .. } => {
                assert_eq!(entry, 0);
                assert_eq!(field, "frames[1].mask");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn order_and_spacing_checked() {
        let frames = vec![frame(3, ClassLabel::Background, false), frame(3, ClassLabel::Background, false)];
        let err = DatasetManifest::new(vec![entry(frames)], ".").validate().unwrap_err();
        assert!(matches!(err, Error::Manifest { ref field, .. } if field == "frames[1].index"));

        let mut e = entry(vec![frame(0, ClassLabel::Background, false)]);
        e.pixel_spacing_mm = PixelSpacing::Isotropic(0.0);
        assert!(DatasetManifest::new(vec![e.clone()], ".").validate().is_err());
        e.pixel_spacing_mm = PixelSpacing::PerAxis([0.2, 0.3]);
        let err = DatasetManifest::new(vec![e.clone()], ".").validate().unwrap_err();
        assert!(err.to_string().contains("anisotropic"));
        e.pixel_spacing_mm = PixelSpacing::PerAxis([0.2, 0.2]);
        assert!(DatasetManifest::new(vec![e], ".").validate().is_ok());
    }

    #[test]
    fn spacing_accepts_number_or_pair() {
        let a: PixelSpacing = serde_json::from_str("0.25").unwrap();
        let b: PixelSpacing = serde_json::from_str("[0.25, 0.25]").unwrap();
        assert_eq!(a.mm(), b.mm());
    }
}
