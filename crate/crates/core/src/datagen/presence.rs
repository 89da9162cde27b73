use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Perfect data training (every modality always present) or imperfect data
/// training (heterogeneous, persistent missing rates).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    Pdt,
    Idt,
}

impl std::str::FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdt" => Ok(TrainingMode::Pdt),
            "idt" => Ok(TrainingMode::Idt),
            other => Err(Error::InvalidProtocol(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingProtocol {
    pub mode: TrainingMode,
    pub target_rates: Vec<f64>,
    pub seed: u64,
}

impl MissingProtocol {
    pub fn pdt(n_modalities: usize, seed: u64) -> Self {
        Self {
            mode: TrainingMode::Pdt,
            target_rates: vec![0.0; n_modalities],
            seed,
        }
    }

    pub fn idt(target_rates: Vec<f64>, seed: u64) -> Result<Self> {
        let p = Self {
            mode: TrainingMode::Idt,
            target_rates,
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Small / medium / large = 0.2 / 0.5 / 0.8, three modalities.
    pub fn brats_sml(seed: u64) -> Self {
        Self::idt(vec![0.2, 0.5, 0.8], seed).expect("valid preset")
    }

    /// Small / medium / large = 0.3 / 0.5 / 0.7, three modalities.
    pub fn myops_sml(seed: u64) -> Self {
        Self::idt(vec![0.3, 0.5, 0.7], seed).expect("valid preset")
    }

    /// Four-modality imbalanced preset (0.2, 0.4, 0.6, 0.8).
    pub fn brats_four(seed: u64) -> Self {
        Self::idt(vec![0.2, 0.4, 0.6, 0.8], seed).expect("valid preset")
    }

    pub fn n_modalities(&self) -> usize {
        self.target_rates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_rates.is_empty() {
            return Err(Error::InvalidProtocol("no modalities".into()));
        }
        for (m, &r) in self.target_rates.iter().enumerate() {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidProtocol(format!(
                    "rate {r} for modality {m} outside [0, 1)"
                )));
            }
        }
        if self.mode == TrainingMode::Pdt && self.target_rates.iter().any(|&r| r != 0.0) {
            return Err(Error::InvalidProtocol(
                "PDT requires all missing rates to be zero".into(),
            ));
        }
        Ok(())
    }

    /// Number of samples that lose modality `m` out of `n`.
    pub fn masked_count(&self, m: usize, n: usize) -> usize {
        match self.mode {
            TrainingMode::Pdt => 0,
            TrainingMode::Idt => (self.target_rates[m] * n as f64).round() as usize,
        }
    }
}

/// Binary `N × M` availability matrix, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceMatrix {
    n_samples: usize,
    n_modalities: usize,
    entries: Vec<u8>,
}

impl PresenceMatrix {
    pub fn new(n_samples: usize, n_modalities: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != n_samples * n_modalities {
            return Err(Error::Shape(format!(
                "presence matrix needs {} entries, got {}",
                n_samples * n_modalities,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|&&e| e > 1) {
            return Err(Error::InvalidProtocol(format!("non-binary entry {bad}")));
        }
        let me = Self {
            n_samples,
            n_modalities,
            entries,
        };
        let empty: Vec<usize> = (0..n_samples).filter(|&n| me.row_count(n) == 0).collect();
        if !empty.is_empty() {
            return Err(Error::InfeasiblePresence { rows: empty });
        }
        if let Some(m) = (0..n_modalities).find(|&m| me.column_count(m) == 0) {
            return Err(Error::InvalidProtocol(format!(
                "modality {m} is missing from every sample"
            )));
        }
        Ok(me)
    }

    pub fn all_present(n_samples: usize, n_modalities: usize) -> Self {
        Self {
            n_samples,
            n_modalities,
            entries: vec![1; n_samples * n_modalities],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("ragged presence rows".into()));
        }
        Self::new(rows.len(), m, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_modalities(&self) -> usize {
        self.n_modalities
    }

    pub fn get(&self, n: usize, m: usize) -> bool {
        self.entries[n * self.n_modalities + m] == 1
    }

    pub fn row(&self, n: usize) -> Vec<bool> {
        (0..self.n_modalities).map(|m| self.get(n, m)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.entries
            .chunks(self.n_modalities)
            .map(<[u8]>::to_vec)
            .collect()
    }

    fn row_count(&self, n: usize) -> usize {
        (0..self.n_modalities).filter(|&m| self.get(n, m)).count()
    }

    pub fn column_count(&self, m: usize) -> usize {
        (0..self.n_samples).filter(|&n| self.get(n, m)).count()
    }

    /// `MR^m = (N − Σ_n I[n,m]) / N` for every modality.
    pub fn missing_rates(&self) -> Vec<f64> {
        (0..self.n_modalities)
            .map(|m| (self.n_samples - self.column_count(m)) as f64 / self.n_samples as f64)
            .collect()
    }
}

/// Draws a presence matrix whose column `m` has exactly
/// `round(rate_m · N)` zeros, with no all-absent row.
///
/// Zeros are placed uniformly at random per column. Rows left empty are then
/// repaired by moving a presence bit from a donor row holding at least two
/// modalities, preferring the modality with the lowest target missing rate,
/// so column counts are preserved.
pub fn sample_presence(
    protocol: &MissingProtocol,
    n_samples: usize,
    n_modalities: usize,
) -> Result<PresenceMatrix> {
    protocol.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidProtocol("n_samples must be at least 1".into()));
    }
    if protocol.n_modalities() != n_modalities {
        return Err(Error::InvalidProtocol(format!(
            "protocol has {} rates but {} modalities were requested",
            protocol.n_modalities(),
            n_modalities
        )));
    }
    if protocol.mode == TrainingMode::Pdt {
        return Ok(PresenceMatrix::all_present(n_samples, n_modalities));
    }

    let masked: Vec<usize> = (0..n_modalities)
        .map(|m| protocol.masked_count(m, n_samples))
        .collect();
    if let Some(m) = masked.iter().position(|&k| k >= n_samples) {
        return Err(Error::InvalidProtocol(format!(
            "rate {} rounds to a missing rate of 1 for modality {m} with N={n_samples}",
            protocol.target_rates[m]
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
    let mut entries = vec![1u8; n_samples * n_modalities];
    let mut order: Vec<usize> = (0..n_samples).collect();
    for (m, &k) in masked.iter().enumerate() {
        order.shuffle(&mut rng);
        for &n in &order[..k] {
            entries[n * n_modalities + m] = 0;
        }
    }

    let total_present: usize = masked.iter().map(|k| n_samples - k).sum();
    let row_sum = |e: &[u8], n: usize| e[n * n_modalities..(n + 1) * n_modalities]
        .iter()
        .map(|&v| v as usize)
        .sum::<usize>();
    let empty: Vec<usize> = (0..n_samples).filter(|&n| row_sum(&entries, n) == 0).collect();
    if total_present < n_samples {
        return Err(Error::InfeasiblePresence { rows: empty });
    }

    let mut preference: Vec<usize> = (0..n_modalities).collect();
    preference.sort_by(|&a, &b| {
        protocol.target_rates[a]
            .total_cmp(&protocol.target_rates[b])
            .then(a.cmp(&b))
    });

    let mut failed = Vec::new();
    for &row in &empty {
        let mut repaired = false;
        for &m in &preference {
            let donors: Vec<usize> = (0..n_samples)
                .filter(|&d| entries[d * n_modalities + m] == 1 && row_sum(&entries, d) >= 2)
                .collect();
            if donors.is_empty() {
                continue;
            }
            let d = donors[rng.random_range(0..donors.len())];
            entries[d * n_modalities + m] = 0;
            entries[row * n_modalities + m] = 1;
            repaired = true;
            break;
        }
        if !repaired {
            failed.push(row);
        }
    }
    if !failed.is_empty() {
        return Err(Error::InfeasiblePresence { rows: failed });
    }
    PresenceMatrix::new(n_samples, n_modalities, entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pdt_is_all_ones() {
        let p = MissingProtocol::pdt(4, 1);
        let m = sample_presence(&p, 10, 4).unwrap();
        assert_eq!(m.missing_rates(), vec![0.0; 4]);
        assert!((0..10).all(|n| m.row(n).iter().all(|&b| b)));
    }

    #[test]
    fn four_modality_preset_counts() {
        let m = sample_presence(&MissingProtocol::brats_four(3), 10, 4).unwrap();
        let counts: Vec<usize> = (0..4).map(|j| m.column_count(j)).collect();
        assert_eq!(counts, vec![8, 6, 4, 2]);
    }

    /// Every 4×2 binary matrix with two ones per column and no empty row.
    fn valid_half_half() -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for bits in 0u32..256 {
            let e: Vec<u8> = (0..8).map(|i| ((bits >> i) & 1) as u8).collect();
            let col = |m: usize| (0..4).map(|n| e[n * 2 + m] as usize).sum::<usize>();
            let rows_ok = (0..4).all(|n| e[n * 2] + e[n * 2 + 1] >= 1);
            if col(0) == 2 && col(1) == 2 && rows_ok {
                out.push(e);
            }
        }
        out
    }

    #[test]
    fn half_half_matches_enumerated_feasible_set() {
        let feasible = valid_half_half();
        // two ones per column over four rows with no empty row forces a
        // permutation structure: C(4,2) = 6 choices
        assert_eq!(feasible.len(), 6);
        for seed in 0..50 {
            let p = MissingProtocol::idt(vec![0.5, 0.5], seed).unwrap();
            let m = sample_presence(&p, 4, 2).unwrap();
            let e: Vec<u8> = m.rows().concat();
            assert!(feasible.contains(&e), "seed {seed}: {e:?}");
        }
    }

    #[test]
    fn infeasible_protocol_rejected() {
        // 3 samples, rates leave only 2 presence bits in total
        let p = MissingProtocol::idt(vec![0.67, 0.67], 0).unwrap();
        match sample_presence(&p, 3, 2) {
            Err(Error::InfeasiblePresence { rows }) => assert!(!rows.is_empty()),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn rate_rounding_to_one_rejected() {
        let p = MissingProtocol::idt(vec![0.96, 0.0], 0).unwrap();
        assert!(matches!(
            sample_presence(&p, 10, 2),
            Err(Error::InvalidProtocol(_))
        ));
    }

    #[test]
    fn pdt_with_nonzero_rate_rejected() {
        let p = MissingProtocol {
            mode: TrainingMode::Pdt,
            target_rates: vec![0.1, 0.0],
            seed: 0,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn same_seed_same_matrix() {
        let p = MissingProtocol::brats_sml(42);
        assert_eq!(
            sample_presence(&p, 64, 3).unwrap(),
            sample_presence(&p, 64, 3).unwrap()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn rows_nonempty_and_rates_exact(
            rates in proptest::collection::vec(0.0f64..0.9, 1..5),
            n in 1usize..60,
            seed in any::<u64>(),
        ) {
            let m = rates.len();
            let p = MissingProtocol::idt(rates.clone(), seed).unwrap();
            match sample_presence(&p, n, m) {
                Ok(mat) => {
                    for row in 0..n {
                        prop_assert!(mat.row(row).iter().any(|&b| b));
                    }
                    for (j, r) in mat.missing_rates().iter().enumerate() {
                        let expect = (rates[j] * n as f64).round() / n as f64;
                        prop_assert_eq!(*r, expect);
                    }
                }
                Err(Error::InfeasiblePresence { .. }) => {
                    let ones: usize = (0..m).map(|j| n - p.masked_count(j, n)).sum();
                    prop_assert!(ones < n);
                }
                Err(Error::InvalidProtocol(_)) => {
                    prop_assert!((0..m).any(|j| p.masked_count(j, n) >= n));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
