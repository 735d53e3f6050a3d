//! Synthetic phantoms, paired training data and dataset manifests.

mod phantom;

pub use phantom::{
    random_phantom, random_phantom_spec, shepp_logan, shepp_logan_spec, Ellipse,
    EllipsePhantomSpec, PhantomRanges, SHEPP_LOGAN_HU_SCALE,
};

mod simulate;

pub use simulate::{simulate_case, SimulatedCase};

mod manifest;

pub use manifest::{
    build_dataset, import_dataset, CaseEntry, DatasetManifest, DatasetSpec, ImportSidecar, Split,
    GEOMETRY_FILE, MANIFEST_FILE,
};
