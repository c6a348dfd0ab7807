use std::path::{Path, PathBuf};

use super::{read_labels, read_tensor, write_labels, write_tensor, LabeledDataset};
use crate::error::{ensure, Result};
use crate::kv::KeyValues;

/// Text manifest naming tensor files plus K, n, ρ. Relative paths resolve
/// against the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub train_samples: PathBuf,
    pub train_labels: PathBuf,
    pub test_samples: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub k: usize,
    pub n: usize,
    pub rho: f64,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let test_samples = kv.get("test_samples").map(resolve);
        let test_labels = kv.get("test_labels").map(resolve);
        ensure!(
            test_samples.is_some() == test_labels.is_some(),
            Config,
            "test_samples and test_labels must be given together"
        );
        Ok(Self {
            train_samples: resolve(&kv.require::<String>("train_samples")?),
            train_labels: resolve(&kv.require::<String>("train_labels")?),
            test_samples,
            test_labels,
            k: kv.require("k")?,
            n: kv.require("n")?,
            rho: kv.parse_opt("rho")?.unwrap_or(1.0),
        })
    }

    /// Paths are written as given.
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::default();
        kv.set("train_samples", self.train_samples.display().to_string());
        kv.set("train_labels", self.train_labels.display().to_string());
        if let (Some(s), Some(l)) = (&self.test_samples, &self.test_labels) {
            kv.set("test_samples", s.display().to_string());
            kv.set("test_labels", l.display().to_string());
        }
        kv.set("k", self.k.to_string());
        kv.set("n", self.n.to_string());
        kv.set("rho", self.rho.to_string());
        kv.to_text()
    }

    fn load_pair(&self, samples: &Path, labels: &Path) -> Result<LabeledDataset> {
        let x = read_tensor(samples)?;
        ensure!(
            x.shape().len() == 2 && x.cols() == self.n,
            Config,
            "{} has shape {:?}, manifest says n = {}",
            samples.display(),
            x.shape(),
            self.n
        );
        LabeledDataset::new(x, read_labels(labels)?, self.k)
    }

    pub fn load_train(&self) -> Result<LabeledDataset> {
        self.load_pair(&self.train_samples, &self.train_labels)
    }

    pub fn load_test(&self) -> Result<Option<LabeledDataset>> {
        match (&self.test_samples, &self.test_labels) {
            (Some(s), Some(l)) => Ok(Some(self.load_pair(s, l)?)),
            _ => Ok(None),
        }
    }

    /// Writes `train.*`/`test.*` tensor files and `manifest.txt` into `dir`.
    pub fn write_dataset(
        dir: &Path,
        train: &LabeledDataset,
        test: Option<&LabeledDataset>,
        rho: f64,
    ) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
        write_tensor(&dir.join("train_x.htvt"), &train.samples)?;
        write_labels(&dir.join("train_y.htvt"), &train.labels)?;
        if let Some(t) = test {
            write_tensor(&dir.join("test_x.htvt"), &t.samples)?;
            write_labels(&dir.join("test_y.htvt"), &t.labels)?;
        }
        let m = DatasetManifest {
            train_samples: "train_x.htvt".into(),
            train_labels: "train_y.htvt".into(),
            test_samples: test.map(|_| "test_x.htvt".into()),
            test_labels: test.map(|_| "test_y.htvt".into()),
            k: train.k,
            n: train.dim(),
            rho,
        };
        let path = dir.join("manifest.txt");
        std::fs::write(&path, m.to_text()).map_err(|e| crate::Error::io(&path, e))?;
        Ok(path)
    }
}
