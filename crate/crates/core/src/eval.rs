//! PSNR scoring and comparison analytics over tables of per-image scores.
//!
//! Scores are PSNR in dB on clamped, unquantized normalized values with
//! peak 1.0. Identical images score `+inf`. When several denoisers tie on an
//! image, the lexicographically smallest denoiser id wins.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::svg;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub class_label: Option<String>,
    pub denoiser_id: String,
    pub psnr_db: f64,
}

/// Mean squared difference after clamping both inputs to `[-0.5, 0.5]`.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "psnr")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.clamp(-0.5, 0.5) as f64 - y.clamp(-0.5, 0.5) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10 log10(peak² / MSE)`; `+inf` when the clamped images are identical.
pub fn psnr_with_peak(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    psnr_with_peak(a, b, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceProfile {
    /// Gains in ascending order.
    pub sorted: Vec<f64>,
    /// Number of strictly negative gains.
    pub zero_crossing: usize,
}

pub fn performance_profile(gains: &[f64]) -> Result<PerformanceProfile> {
    if gains.is_empty() {
        return Err(Error::invalid("performance profile needs at least one gain"));
    }
    if gains.iter().any(|g| g.is_nan()) {
        return Err(Error::invalid("performance profile gains contain NaN"));
    }
    let mut sorted = gains.to_vec();
    sorted.sort_by(f64::total_cmp);
    let zero_crossing = sorted.iter().take_while(|&&g| g < 0.0).count();
    Ok(PerformanceProfile { sorted, zero_crossing })
}

/// Complete image × denoiser score table with per-image class labels.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    pub denoisers: Vec<String>,
    /// image id → (class, score per denoiser in `denoisers` order)
    pub images: BTreeMap<String, (Option<String>, Vec<f64>)>,
}

impl ScoreTable {
    /// Validates that every image carries exactly one score per denoiser
    /// and a consistent class label.
    pub fn from_records(records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no evaluation records"));
        }
        let denoisers: Vec<String> = records
            .iter()
            .map(|r| r.denoiser_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let column: BTreeMap<&str, usize> = denoisers.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let mut images: BTreeMap<String, (Option<String>, Vec<Option<f64>>)> = BTreeMap::new();
        for r in records {
            if r.psnr_db.is_nan() || r.psnr_db == f64::NEG_INFINITY {
                return Err(Error::invalid(format!(
                    "invalid psnr {} for image {:?} denoiser {:?}",
                    r.psnr_db, r.image_id, r.denoiser_id
                )));
            }
            let entry = images
                .entry(r.image_id.clone())
                .or_insert_with(|| (r.class_label.clone(), vec![None; denoisers.len()]));
            if entry.0 != r.class_label {
                return Err(Error::invalid(format!(
                    "image {:?} has inconsistent class labels {:?} and {:?}",
                    r.image_id, entry.0, r.class_label
                )));
            }
            let slot = &mut entry.1[column[r.denoiser_id.as_str()]];
            if slot.is_some() {
                return Err(Error::invalid(format!(
                    "duplicate score for image {:?} denoiser {:?}",
                    r.image_id, r.denoiser_id
                )));
            }
            *slot = Some(r.psnr_db);
        }
        let mut complete = BTreeMap::new();
        for (image, (class, scores)) in images {
            let mut row = Vec::with_capacity(scores.len());
            for (d, s) in denoisers.iter().zip(scores) {
                row.push(s.ok_or_else(|| {
                    Error::invalid(format!("missing score for image {image:?} denoiser {d:?}"))
                })?);
            }
            complete.insert(image, (class, row));
        }
        Ok(Self {
            denoisers,
            images: complete,
        })
    }

    /// Column index of the best score; ties go to the earliest
    /// (lexicographically smallest) denoiser.
    fn winner(scores: &[f64]) -> usize {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }

    /// Per-image gain `score(denoiser) - score(baseline)` in image-id order.
    pub fn gains(&self, denoiser: &str, baseline: &str) -> Result<Vec<f64>> {
        let col = |d: &str| {
            self.denoisers
                .iter()
                .position(|x| x == d)
                .ok_or_else(|| Error::invalid(format!("unknown denoiser {d:?}")))
        };
        let (a, b) = (col(denoiser)?, col(baseline)?);
        Ok(self.images.values().map(|(_, s)| s[a] - s[b]).collect())
    }
}

/// Fraction of images on which each denoiser scores highest.
pub fn win_rates(records: &[EvalRecord]) -> Result<BTreeMap<String, f64>> {
    let table = ScoreTable::from_records(records)?;
    let mut wins = vec![0usize; table.denoisers.len()];
    for (_, scores) in table.images.values() {
        wins[ScoreTable::winner(scores)] += 1;
    }
    let n = table.images.len() as f64;
    Ok(table
        .denoisers
        .iter()
        .zip(wins)
        .map(|(d, w)| (d.clone(), w as f64 / n))
        .collect())
}

/// Rows are image classes, columns denoisers (both sorted); entry `(i, j)`
/// is the fraction of class-`i` images on which denoiser `j` wins.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub denoisers: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ConfusionMatrix {
    pub fn get(&self, class: &str, denoiser: &str) -> Option<f64> {
        let i = self.classes.iter().position(|c| c == class)?;
        let j = self.denoisers.iter().position(|d| d == denoiser)?;
        Some(self.values[i][j])
    }

    pub fn is_square(&self) -> bool {
        self.classes.len() == self.denoisers.len()
    }
}

pub fn cross_class_confusion(records: &[EvalRecord]) -> Result<ConfusionMatrix> {
    let table = ScoreTable::from_records(records)?;
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (image, (class, scores)) in &table.images {
        let class = class
            .as_deref()
            .ok_or_else(|| Error::invalid(format!("image {image:?} has no class label")))?;
        counts.entry(class).or_insert_with(|| vec![0; table.denoisers.len()])[ScoreTable::winner(scores)] += 1;
    }
    let classes = counts.keys().map(|c| c.to_string()).collect();
    let values = counts
        .values()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter().map(|&c| c as f64 / n as f64).collect()
        })
        .collect();
    Ok(ConfusionMatrix {
        classes,
        denoisers: table.denoisers,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileReport {
    pub denoiser: String,
    pub baseline: String,
    pub profile: PerformanceProfile,
}

/// Optional analytics to write next to the records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Analytics {
    pub profile: Option<ProfileReport>,
    pub wins: Option<BTreeMap<String, f64>>,
    pub confusion: Option<ConfusionMatrix>,
}

impl Analytics {
    /// Everything computable from the records: win rates always, a profile
    /// when `profile` names a (denoiser, baseline) pair, a confusion matrix
    /// when every image has a class label.
    pub fn compute(records: &[EvalRecord], profile: Option<(&str, &str)>) -> Result<Self> {
        let table = ScoreTable::from_records(records)?;
        let profile = match profile {
            Some((d, b)) => Some(ProfileReport {
                denoiser: d.to_string(),
                baseline: b.to_string(),
                profile: performance_profile(&table.gains(d, b)?)?,
            }),
            None => None,
        };
        let labelled = table.images.values().all(|(c, _)| c.is_some());
        Ok(Self {
            profile,
            wins: Some(win_rates(records)?),
            confusion: if labelled { Some(cross_class_confusion(records)?) } else { None },
        })
    }
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

const METADATA: &str = "PSNR in dB on clamped [-0.5, 0.5] unquantized outputs, peak 1.0 (255 on the 8-bit scale)";

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `records.csv` and, for each analytic present, its CSV and SVG.
/// Returns the written paths in order.
pub fn emit_report(records: &[EvalRecord], analytics: &Analytics, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let path = out_dir.join("records.csv");
    write_csv(
        &path,
        &["image_id", "class", "denoiser", "psnr_db"],
        records.iter().map(|r| {
            vec![
                r.image_id.clone(),
                r.class_label.clone().unwrap_or_default(),
                r.denoiser_id.clone(),
                fmt_f64(r.psnr_db),
            ]
        }),
    )?;
    written.push(path);

    if let Some(p) = &analytics.profile {
        let path = out_dir.join("profile.csv");
        write_csv(
            &path,
            &["rank", "gain_db", "below_zero"],
            p.profile.sorted.iter().enumerate().map(|(i, g)| {
                vec![i.to_string(), fmt_f64(*g), u8::from(*g < 0.0).to_string()]
            }),
        )?;
        written.push(path);
        let path = out_dir.join("profile.svg");
        let title = format!("PSNR gain of {} over {}", p.denoiser, p.baseline);
        let desc = format!("{METADATA}; zero crossing at {}", p.profile.zero_crossing);
        write_text(
            &path,
            &svg::line_chart(&title, &desc, "images (ascending gain)", "gain [dB]", &p.profile.sorted, Some(p.profile.zero_crossing)),
        )?;
        written.push(path);
    }

    if let Some(wins) = &analytics.wins {
        let path = out_dir.join("wins.csv");
        write_csv(
            &path,
            &["denoiser", "win_fraction"],
            wins.iter().map(|(d, f)| vec![d.clone(), fmt_f64(*f)]),
        )?;
        written.push(path);
        let path = out_dir.join("wins.svg");
        let labels: Vec<String> = wins.keys().cloned().collect();
        let values: Vec<f64> = wins.values().copied().collect();
        write_text(&path, &svg::bar_chart("Share of images won", METADATA, "fraction of images", &labels, &values))?;
        written.push(path);
    }

    if let Some(m) = &analytics.confusion {
        let path = out_dir.join("confusion.csv");
        let mut header = vec!["class"];
        header.extend(m.denoisers.iter().map(String::as_str));
        write_csv(
            &path,
            &header,
            m.classes.iter().zip(&m.values).map(|(c, row)| {
                std::iter::once(c.clone()).chain(row.iter().map(|v| fmt_f64(*v))).collect()
            }),
        )?;
        written.push(path);
        let path = out_dir.join("confusion.svg");
        write_text(&path, &svg::heatmap("Cross-class win probability", METADATA, &m.classes, &m.denoisers, &m.values))?;
        written.push(path);
    }
    Ok(written)
}
