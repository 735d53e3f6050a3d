use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dose::DoseParams;
use crate::error::{Error, Result};
use crate::io::{
    read_image, read_sinogram, read_weights, write_image, write_sinogram, write_weights,
};
use crate::tomo::{FanBeamGeometry, FanBeamProjector, FilterKind, Image};

use super::phantom::{random_phantom, PhantomRanges};
use super::simulate::{simulate_case, SimulatedCase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// File names of one case, relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub split: Split,
    pub reference: String,
    pub sinogram: String,
    pub weights: String,
    pub fbp: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub geometry_file: String,
    pub geometry_id: String,
    /// Dose settings; each case draws its own noise seed from `seed`.
    pub dose: DoseParams,
    pub filter: FilterKind,
    pub seed: u64,
    pub cases: Vec<CaseEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GEOMETRY_FILE: &str = "geometry.json";

/// Counts and generators for [`build_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub phantom: PhantomRanges,
    pub dose: DoseParams,
    #[serde(default)]
    pub filter: FilterKind,
    pub seed: u64,
}

impl DatasetSpec {
    /// 40 / 5 / 10 phantoms at 128², I0 = 10⁴, σ² = 25.
    pub fn desk(seed: u64) -> Self {
        DatasetSpec {
            n_train: 40,
            n_val: 5,
            n_test: 10,
            phantom: PhantomRanges::desk(128),
            dose: DoseParams::new(1e4, 25.0, seed),
            filter: FilterKind::default(),
            seed,
        }
    }
}

impl DatasetManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        m.check_splits().map_err(|d| Error::format(&path, d))?;
        Ok(m)
    }

    fn check_splits(&self) -> std::result::Result<(), String> {
        let mut seen = HashSet::new();
        for c in &self.cases {
            let safe = !c.id.is_empty()
                && !c.id.starts_with('.')
                && c.id
                    .chars()
                    .all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch));
            if !safe {
                return Err(format!("case id {:?} is not a plain file-name token", c.id));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(format!("case id {:?} listed twice", c.id));
            }
        }
        Ok(())
    }

    pub fn split(&self, s: Split) -> Vec<&CaseEntry> {
        self.cases.iter().filter(|c| c.split == s).collect()
    }

    pub fn geometry(&self, dir: &Path) -> Result<FanBeamGeometry> {
        let path = dir.join(&self.geometry_file);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        FanBeamGeometry::from_json(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Reads one case back and checks it against the dataset geometry.
    pub fn load_case(
        &self,
        dir: &Path,
        entry: &CaseEntry,
        geom: &FanBeamGeometry,
    ) -> Result<SimulatedCase> {
        let truth = read_image(&dir.join(&entry.reference))?;
        let y = read_sinogram(&dir.join(&entry.sinogram))?;
        let weights = read_weights(&dir.join(&entry.weights))?;
        let x0 = read_image(&dir.join(&entry.fbp))?;
        let bad = |what: &str| {
            Error::format(
                dir.join(&entry.id),
                format!("{what} does not match the geometry"),
            )
        };
        if (y.n_views(), y.n_dets()) != (geom.n_views, geom.n_dets) {
            return Err(bad("sinogram"));
        }
        if (weights.n_views(), weights.n_dets()) != (geom.n_views, geom.n_dets) {
            return Err(bad("weights"));
        }
        for img in [&truth, &x0] {
            if (img.rows(), img.cols()) != (geom.image_rows, geom.image_cols) {
                return Err(bad("image"));
            }
        }
        Ok(SimulatedCase {
            id: entry.id.clone(),
            truth,
            y,
            weights,
            x0,
        })
    }

    pub fn load_split(
        &self,
        dir: &Path,
        s: Split,
        geom: &FanBeamGeometry,
    ) -> Result<Vec<SimulatedCase>> {
        self.split(s)
            .into_iter()
            .map(|e| self.load_case(dir, e, geom))
            .collect()
    }

    /// Checks that every referenced file exists and matches the geometry.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        let geom = self.geometry(dir)?;
        if geom.id() != self.geometry_id {
            return Err(Error::format(
                dir.join(&self.geometry_file),
                "geometry id differs from the manifest",
            ));
        }
        for e in &self.cases {
            self.load_case(dir, e, &geom)?;
        }
        Ok(())
    }

    /// SHA-256 over the manifest and every file it references.
    pub fn content_hash(&self, dir: &Path) -> Result<String> {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("manifest serializes"));
        let mut files = vec![self.geometry_file.clone()];
        for c in &self.cases {
            files.extend([
                c.reference.clone(),
                c.sinogram.clone(),
                c.weights.clone(),
                c.fbp.clone(),
            ]);
        }
        for f in files {
            let p = dir.join(&f);
            h.update(std::fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn entry_for(id: &str, split: Split) -> CaseEntry {
    CaseEntry {
        id: id.to_string(),
        split,
        reference: format!("cases/{id}_ref.sprg"),
        sinogram: format!("cases/{id}_sino.sprg"),
        weights: format!("cases/{id}_weights.sprg"),
        fbp: format!("cases/{id}_fbp.sprg"),
    }
}

fn write_case(dir: &Path, e: &CaseEntry, c: &SimulatedCase, geom: &FanBeamGeometry) -> Result<()> {
    write_image(&dir.join(&e.reference), &c.truth)?;
    write_sinogram(&dir.join(&e.sinogram), &c.y, geom.det_spacing_mm)?;
    write_weights(&dir.join(&e.weights), &c.weights, geom.det_spacing_mm)?;
    write_image(&dir.join(&e.fbp), &c.x0)
}

/// Simulates every reference image and writes all artifacts plus the
/// manifest. Case `i` gets noise seed `dose.seed + i`.
fn write_dataset(
    dir: &Path,
    geom: &FanBeamGeometry,
    dose: &DoseParams,
    filter: FilterKind,
    seed: u64,
    refs: Vec<(String, Split, Image)>,
) -> Result<DatasetManifest> {
    dose.validate()?;
    geom.validate()?;
    std::fs::create_dir_all(dir.join("cases")).map_err(|e| Error::io(dir.join("cases"), e))?;
    let gpath = dir.join(GEOMETRY_FILE);
    std::fs::write(&gpath, geom.to_json()).map_err(|e| Error::io(&gpath, e))?;
    let proj = FanBeamProjector::new(geom)?;
    let entries: Vec<CaseEntry> = refs
        .par_iter()
        .enumerate()
        .map(|(i, (id, split, truth))| {
            let d = DoseParams {
                seed: dose.seed.wrapping_add(i as u64),
                ..dose.clone()
            };
            let case = simulate_case(id.clone(), &proj, truth, &d, filter)?;
            let e = entry_for(id, *split);
            write_case(dir, &e, &case, geom)?;
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let m = DatasetManifest {
        geometry_file: GEOMETRY_FILE.into(),
        geometry_id: geom.id(),
        dose: dose.clone(),
        filter,
        seed,
        cases: entries,
    };
    m.check_splits().map_err(Error::Data)?;
    m.save(dir)?;
    Ok(m)
}

/// Generates seeded random phantoms for the three splits, simulates
/// low-dose data, weights and FBP images and writes them under `dir`.
pub fn build_dataset(
    dir: &Path,
    geom: &FanBeamGeometry,
    spec: &DatasetSpec,
) -> Result<DatasetManifest> {
    if spec.n_train == 0 || spec.n_val == 0 || spec.n_test == 0 {
        return Err(Error::arg("every split needs at least one case"));
    }
    if (spec.phantom.size, spec.phantom.size) != (geom.image_rows, geom.image_cols) {
        return Err(Error::arg("phantom size does not match the geometry"));
    }
    if spec.phantom.pixel_size_mm != geom.pixel_size_mm {
        return Err(Error::arg("phantom pixel size does not match the geometry"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan: Vec<(String, Split, u64)> = [
        (Split::Train, spec.n_train, "train"),
        (Split::Val, spec.n_val, "val"),
        (Split::Test, spec.n_test, "test"),
    ]
    .into_iter()
    .flat_map(|(s, n, tag)| (0..n).map(move |i| (format!("{tag}{i:03}"), s)))
    .map(|(id, s)| (id, s, rng.random::<u64>()))
    .collect();
    let refs = plan
        .into_par_iter()
        .map(|(id, s, ps)| Ok((id, s, random_phantom(&spec.phantom, ps)?)))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(dir, geom, &spec.dose, spec.filter, spec.seed, refs)
}

/// Sidecar describing one raw image in an import directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportSidecar {
    pub rows: usize,
    pub cols: usize,
    pub pixel_size_mm: f64,
    pub split: Split,
    /// Defaults to the file stem.
    #[serde(default)]
    pub id: Option<String>,
}

/// Maps a directory of `<name>.f32` little-endian float32 HU images, each
/// with a `<name>.json` [`ImportSidecar`], into a dataset: the images act
/// as references and low-dose data are simulated from them.
pub fn import_dataset(
    src: &Path,
    dir: &Path,
    geom: &FanBeamGeometry,
    dose: &DoseParams,
    filter: FilterKind,
) -> Result<DatasetManifest> {
    let mut raws: Vec<PathBuf> = std::fs::read_dir(src)
        .map_err(|e| Error::io(src, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f32"))
        .collect();
    raws.sort();
    if raws.is_empty() {
        return Err(Error::Data(format!("no .f32 images in {}", src.display())));
    }
    let mut refs = Vec::with_capacity(raws.len());
    for raw in raws {
        let side = raw.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: ImportSidecar =
            serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))?;
        if (meta.rows, meta.cols) != (geom.image_rows, geom.image_cols)
            || meta.pixel_size_mm != geom.pixel_size_mm
        {
            return Err(Error::format(
                &side,
                "image grid does not match the geometry",
            ));
        }
        let bytes = std::fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
        if bytes.len() != 4 * meta.rows * meta.cols {
            return Err(Error::format(
                &raw,
                format!(
                    "expected {} bytes, found {}",
                    4 * meta.rows * meta.cols,
                    bytes.len()
                ),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let img = Image::new(meta.rows, meta.cols, meta.pixel_size_mm, data)
            .map_err(|e| Error::format(&raw, e.to_string()))?;
        let id = meta.id.unwrap_or_else(|| {
            raw.file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        });
        refs.push((id, meta.split, img));
    }
    write_dataset(dir, geom, dose, filter, dose.seed, refs)
}
