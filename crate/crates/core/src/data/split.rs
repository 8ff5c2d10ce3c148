use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    /// Patients per split: largest-remainder rounding, with every split that
    /// has a positive ratio getting at least one patient.
    pub fn counts(&self, patients: usize) -> Result<[usize; 3]> {
        let r = self.as_array();
        let sum: f64 = r.iter().sum();
        if r.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must be nonnegative and sum to 1")));
        }
        let wanted = r.iter().filter(|&&x| x > 0.0).count();
        if patients < wanted {
            return Err(Error::InvalidInput(format!(
                "{patients} patients cannot fill {wanted} splits"
            )));
        }
        let exact = r.map(|x| x * patients as f64);
        let mut counts = exact.map(|x| x.floor() as usize);
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        let mut left = patients - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        for i in 0..3 {
            if r[i] > 0.0 && counts[i] == 0 {
                let donor = (0..3).max_by_key(|&j| counts[j]).expect("three splits");
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
        Ok(counts)
    }
}

/// Shuffle patients under `seed` and partition them into train, validation,
/// and test manifests. Clips of one patient always land in the same split.
pub fn make_splits(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<[DatasetManifest; 3]> {
    let mut patients: Vec<&str> = Vec::new();
    for e in &manifest.entries {
        if !patients.contains(&e.patient_id.as_str()) {
            patients.push(&e.patient_id);
        }
    }
    patients.sort_unstable();
    let counts = ratios.counts(patients.len())?;
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut out: [DatasetManifest; 3] =
        std::array::from_fn(|_| DatasetManifest::new(Vec::new(), manifest.root.clone()));
    let mut start = 0;
    for (k, n) in counts.into_iter().enumerate() {
        let group = &patients[start..start + n];
        start += n;
        out[k].entries = manifest
            .entries
            .iter()
            .filter(|e| group.contains(&e.patient_id.as_str()))
            .cloned()
            .collect();
    }
    Ok(out)
}
