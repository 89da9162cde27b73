use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::ModalitySample;
use crate::error::{Error, Result};
use crate::model::{DmafNet, ForwardOptions};
use crate::objective::{dice, hausdorff, region_mask};

/// All non-empty modality subsets, ordered by size and then lexicographically by index.
pub fn combinations(m: usize) -> Vec<Vec<bool>> {
    let mut subsets: Vec<Vec<usize>> = (1u32..(1 << m))
        .map(|bits| (0..m).filter(|i| bits & (1 << i) != 0).collect())
        .collect();
    subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    subsets
        .into_iter()
        .map(|s| (0..m).map(|i| s.contains(&i)).collect())
        .collect()
}

pub fn combination_label(present: &[bool]) -> String {
    present.iter().map(|&p| if p { '1' } else { '0' }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: String,
    pub combination: String,
    /// Region Dice per foreground class.
    pub dsc: Vec<f64>,
    /// Boundary Hausdorff per foreground class; `None` when either mask is empty.
    pub hd: Vec<Option<f64>>,
}

impl SampleMetrics {
    pub fn macro_dsc(&self) -> f64 {
        self.dsc.iter().sum::<f64>() / self.dsc.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationRow {
    pub present: Vec<bool>,
    pub n_samples: usize,
    pub dsc: Vec<f64>,
    pub dsc_mean: f64,
    pub hd: Vec<Option<f64>>,
    pub hd_mean: Option<f64>,
    /// Per-class count of samples whose Hausdorff distance is undefined.
    pub hd_undefined: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_modalities: usize,
    pub n_classes: usize,
    pub rows: Vec<CombinationRow>,
    pub samples: Vec<SampleMetrics>,
}

/// Region Dice and Hausdorff for each foreground class of a prediction.
pub fn score(pred: &[u8], truth: &[u8], h: usize, w: usize, n_classes: usize) -> (Vec<f64>, Vec<Option<f64>>) {
    let mut dsc = Vec::new();
    let mut hd = Vec::new();
    for c in 1..n_classes as u8 {
        let p = region_mask(pred, c);
        let t = region_mask(truth, c);
        dsc.push(dice(&p, &t));
        hd.push(hausdorff(&p, &t, h, w));
    }
    (dsc, hd)
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluate the fused path on every requested modality subset. Modalities outside the
/// subset, or missing from a sample, are zeroed; samples left with nothing are skipped.
pub fn evaluate(
    net: &DmafNet,
    samples: &[ModalitySample],
    combos: &[Vec<bool>],
    use_dmaf: bool,
) -> Result<MetricsReport> {
    let cfg = net.config();
    let (h, w) = cfg.image_size;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for combo in combos {
        if combo.len() != cfg.n_modalities {
            return Err(Error::Shape(format!(
                "combination {} has the wrong number of modalities",
                combination_label(combo)
            )));
        }
        let mut per = Vec::new();
        for s in samples {
            let keep: Vec<bool> = combo.iter().zip(&s.presence).map(|(a, b)| *a && *b).collect();
            if !keep.iter().any(|&k| k) {
                continue;
            }
            let pred = net.predict(&s.restricted(&keep), use_dmaf)?;
            let (dsc, hd) = score(&pred, &s.label, h, w, cfg.n_classes);
            per.push(SampleMetrics {
                sample_id: s.sample_id.clone(),
                combination: combination_label(combo),
                dsc,
                hd,
            });
        }
        let n = per.len();
        let k = cfg.n_classes - 1;
        let dsc: Vec<f64> = (0..k)
            .map(|c| per.iter().map(|p| p.dsc[c]).sum::<f64>() / n.max(1) as f64)
            .collect();
        let hd: Vec<Option<f64>> = (0..k).map(|c| mean_opt(per.iter().map(|p| p.hd[c]))).collect();
        rows.push(CombinationRow {
            present: combo.clone(),
            n_samples: n,
            dsc_mean: dsc.iter().sum::<f64>() / k as f64,
            hd_mean: mean_opt(hd.iter().copied()),
            hd_undefined: (0..k)
                .map(|c| per.iter().filter(|p| p.hd[c].is_none()).count())
                .collect(),
            dsc,
            hd,
        });
        all.extend(per);
    }
    Ok(MetricsReport {
        n_modalities: cfg.n_modalities,
        n_classes: cfg.n_classes,
        rows,
        samples: all,
    })
}

/// Mean macro-Dice of the shared decoder applied to modality `m` alone, over samples where it is present.
pub fn evaluate_uni(net: &DmafNet, samples: &[ModalitySample], m: usize) -> Result<f64> {
    let cfg = net.config();
    let (h, w) = cfg.image_size;
    let mut total = 0.0;
    let mut n = 0;
    for s in samples.iter().filter(|s| s.presence[m]) {
        let keep: Vec<bool> = (0..cfg.n_modalities).map(|i| i == m).collect();
        let s = s.restricted(&keep);
        let out = net.forward(
            &net.inputs(&s)?,
            &s.presence,
            ForwardOptions {
                use_dmaf: true,
                uni_decoders: true,
            },
        )?;
        let z = out.uni_logits[m]
            .as_ref()
            .ok_or_else(|| Error::Internal("missing uni-modal output".into()))?;
        let (_, c, hh, ww) = z.dims4()?;
        let pred: Vec<u8> = z
            .reshape((c, hh * ww))?
            .argmax(0)?
            .to_vec1::<u32>()?
            .into_iter()
            .map(|v| v as u8)
            .collect();
        let (dsc, _) = score(&pred, &s.label, h, w, cfg.n_classes);
        total += dsc.iter().sum::<f64>() / dsc.len() as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Config(format!("modality {m} absent from every sample")));
    }
    Ok(total / n as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn header(&self) -> Vec<String> {
        let k = self.n_classes - 1;
        let mut cols: Vec<String> = (0..self.n_modalities).map(|m| format!("m{m}")).collect();
        cols.extend((1..=k).map(|c| format!("dsc_c{c}")));
        cols.push("dsc_mean".into());
        cols.extend((1..=k).map(|c| format!("hd_c{c}")));
        cols.push("hd_mean".into());
        cols.extend((1..=k).map(|c| format!("hd_undefined_c{c}")));
        cols.push("n_samples".into());
        cols
    }

    fn write_csv(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
        let bad = |e: csv::Error| Error::Internal(format!("csv {}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(bad)?;
        w.write_record(header).map_err(bad)?;
        for r in rows {
            w.write_record(r).map_err(bad)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// One row per modality subset.
    pub fn write_combinations(&self, path: &Path) -> Result<()> {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut v: Vec<String> = r.present.iter().map(|&p| (p as u8).to_string()).collect();
                v.extend(r.dsc.iter().map(f64::to_string));
                v.push(r.dsc_mean.to_string());
                v.extend(r.hd.iter().map(|h| fmt_opt(*h)));
                v.push(fmt_opt(r.hd_mean));
                v.extend(r.hd_undefined.iter().map(usize::to_string));
                v.push(r.n_samples.to_string());
                v
            })
            .collect();
        Self::write_csv(path, self.header(), rows)
    }

    pub fn write_samples(&self, path: &Path) -> Result<()> {
        let k = self.n_classes - 1;
        let mut header = vec!["sample_id".to_string(), "combination".to_string()];
        header.extend((1..=k).map(|c| format!("dsc_c{c}")));
        header.extend((1..=k).map(|c| format!("hd_c{c}")));
        let rows = self
            .samples
            .iter()
            .map(|s| {
                let mut v = vec![s.sample_id.clone(), s.combination.clone()];
                v.extend(s.dsc.iter().map(f64::to_string));
                v.extend(s.hd.iter().map(|h| fmt_opt(*h)));
                v
            })
            .collect();
        Self::write_csv(path, header, rows)
    }

    /// `combinations.csv`, `samples.csv` and `report.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_combinations(&dir.join("combinations.csv"))?;
        self.write_samples(&dir.join("samples.csv"))?;
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn row(&self, present: &[bool]) -> Option<&CombinationRow> {
        self.rows.iter().find(|r| r.present == present)
    }
}
