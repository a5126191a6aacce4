use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use super::{bpp, entropy, ffs_score, psnr, ssim, PatchClassifier};
use crate::error::{Error, Result};
use crate::imaging::{list_images, load_image};

/// A no-reference scorer run as `<program> [args...] <image path>`; the last
/// whitespace-separated token it prints is read as the score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalScorer {
    pub program: String,
    pub args: Vec<String>,
}

impl ExternalScorer {
    /// Splits a command line on whitespace.
    pub fn parse(command: &str) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::arg("empty external scorer command"))?;
        Ok(ExternalScorer {
            program,
            args: parts.collect(),
        })
    }

    pub fn score(&self, image: &Path) -> Result<f64> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(image)
            .output()
            .map_err(|e| Error::External(format!("cannot run {}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(Error::External(format!(
                "{} exited with {} on {}",
                self.program,
                out.status,
                image.display()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        let token = text
            .split_whitespace()
            .last()
            .ok_or_else(|| Error::External(format!("{} printed nothing for {}", self.program, image.display())))?;
        token
            .parse::<f64>()
            .map_err(|_| Error::External(format!("{} printed '{token}', not a number", self.program)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    /// Path relative to the evaluated directory.
    pub id: String,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub entropy: f64,
    pub bpp: f64,
    pub ffs: Option<f64>,
    pub external: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub checkpoint: Option<String>,
    pub config_hash: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregates {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub entropy: f64,
    pub bpp: f64,
    pub ffs: Option<f64>,
    pub external: Option<f64>,
}

/// Per-image quality rows plus dataset means.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QualityReport {
    pub meta: ReportMeta,
    pub rows: Vec<ReportRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Mean of a column that is either present in every row or in none.
fn column_mean(rows: &[ReportRow], get: impl Fn(&ReportRow) -> Option<f64>) -> Option<f64> {
    if rows.is_empty() || rows.iter().any(|r| get(r).is_none()) {
        return None;
    }
    Some(mean(rows.iter().filter_map(get)))
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

impl QualityReport {
    pub fn aggregates(&self) -> Aggregates {
        Aggregates {
            psnr: column_mean(&self.rows, |r| r.psnr),
            ssim: column_mean(&self.rows, |r| r.ssim),
            entropy: mean(self.rows.iter().map(|r| r.entropy)),
            bpp: mean(self.rows.iter().map(|r| r.bpp)),
            ffs: column_mean(&self.rows, |r| r.ffs),
            external: column_mean(&self.rows, |r| r.external),
        }
    }

    /// Column names present in this report, in display order.
    pub fn columns(&self) -> Vec<&'static str> {
        let a = self.aggregates();
        let mut cols = Vec::new();
        if a.psnr.is_some() {
            cols.push("psnr");
        }
        if a.ssim.is_some() {
            cols.push("ssim");
        }
        cols.extend(["entropy", "bpp"]);
        if a.ffs.is_some() {
            cols.push("ffs");
        }
        if a.external.is_some() {
            cols.push("external");
        }
        cols
    }

    fn cells(cols: &[&str], get: impl Fn(&str) -> Option<f64>) -> Vec<String> {
        cols.iter().map(|c| get(c).map(fmt_value).unwrap_or_default()).collect()
    }

    fn row_value(r: &ReportRow, col: &str) -> Option<f64> {
        match col {
            "psnr" => r.psnr,
            "ssim" => r.ssim,
            "entropy" => Some(r.entropy),
            "bpp" => Some(r.bpp),
            "ffs" => r.ffs,
            "external" => r.external,
            _ => None,
        }
    }

    fn agg_value(a: &Aggregates, col: &str) -> Option<f64> {
        match col {
            "psnr" => a.psnr,
            "ssim" => a.ssim,
            "entropy" => Some(a.entropy),
            "bpp" => Some(a.bpp),
            "ffs" => a.ffs,
            "external" => a.external,
            _ => None,
        }
    }

    fn header_lines(&self) -> String {
        let m = &self.meta;
        format!(
            "dataset: {}\ncheckpoint: {}\nconfig hash: {}\n",
            m.dataset,
            m.checkpoint.as_deref().unwrap_or("-"),
            m.config_hash.as_deref().unwrap_or("-")
        )
    }

    /// Aligned plain-text table with a final `mean` row.
    pub fn to_table(&self) -> String {
        let cols = self.columns();
        let agg = self.aggregates();
        let mut lines: Vec<Vec<String>> = vec![std::iter::once("image".to_string())
            .chain(cols.iter().map(|c| c.to_string()))
            .collect()];
        for r in &self.rows {
            let mut l = vec![r.id.clone()];
            l.extend(Self::cells(&cols, |c| Self::row_value(r, c)));
            lines.push(l);
        }
        let mut l = vec!["mean".to_string()];
        l.extend(Self::cells(&cols, |c| Self::agg_value(&agg, c)));
        lines.push(l);
        let widths: Vec<usize> = (0..=cols.len())
            .map(|i| lines.iter().map(|l| l[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = self.header_lines();
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * cols.len());
        for (k, l) in lines.iter().enumerate() {
            if k == lines.len() - 1 {
                out.push_str(&rule);
                out.push('\n');
            }
            let _ = write!(out, "{:<w$}", l[0], w = widths[0]);
            for (i, cell) in l.iter().enumerate().skip(1) {
                let _ = write!(out, "  {:>w$}", cell, w = widths[i]);
            }
            out.push('\n');
            if k == 0 {
                out.push_str(&rule);
                out.push('\n');
            }
        }
        out
    }

    /// Comma-separated rows; metadata lines start with `#` and the last row
    /// holds the means under the id `mean`.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let agg = self.aggregates();
        let mut out: String = self.header_lines().lines().map(|l| format!("# {l}\n")).collect();
        out.push_str("image");
        for c in &cols {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        let full = |v: Option<f64>| match v {
            Some(f64::INFINITY) => "inf".to_string(),
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        for r in &self.rows {
            out.push_str(&csv_field(&r.id));
            for c in &cols {
                let _ = write!(out, ",{}", full(Self::row_value(r, c)));
            }
            out.push('\n');
        }
        out.push_str("mean");
        for c in &cols {
            let _ = write!(out, ",{}", full(Self::agg_value(&agg, c)));
        }
        out.push('\n');
        out
    }

    /// Writes CSV for a `.csv` path and the text table otherwise.
    pub fn write(&self, path: &Path) -> Result<()> {
        let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let body = if csv { self.to_csv() } else { self.to_table() };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Default)]
pub struct EvaluateOptions<'a> {
    pub reference: Option<&'a Path>,
    pub scorer: Option<&'a dyn PatchClassifier>,
    pub external: Option<ExternalScorer>,
    pub recursive: bool,
    pub meta: ReportMeta,
}

fn relative_ids(dir: &Path, recursive: bool) -> Result<Vec<(String, PathBuf)>> {
    Ok(list_images(dir, recursive)?
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            (rel, p)
        })
        .collect())
}

/// Scores every image in `dir`, rows in path order. With a reference
/// directory, files are paired by relative path and every file on either
/// side must have a partner.
pub fn evaluate(dir: &Path, opts: &EvaluateOptions<'_>) -> Result<QualityReport> {
    let images = relative_ids(dir, opts.recursive)?;
    let reference = match opts.reference {
        Some(r) => {
            let refs = relative_ids(r, opts.recursive)?;
            let a: BTreeSet<&str> = images.iter().map(|(id, _)| id.as_str()).collect();
            let b: BTreeSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
            let mut unmatched: Vec<String> = a.difference(&b).map(|s| s.to_string()).collect();
            unmatched.extend(b.difference(&a).map(|s| format!("{s} (reference)")));
            if !unmatched.is_empty() {
                return Err(Error::Pairing(unmatched));
            }
            Some(r)
        }
        None => None,
    };
    let mut meta = opts.meta.clone();
    if meta.dataset.is_empty() {
        meta.dataset = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
    }
    let mut rows = Vec::with_capacity(images.len());
    for (id, path) in &images {
        let img = load_image(path)?;
        let (psnr_v, ssim_v) = match reference {
            Some(r) => {
                let other = load_image(r.join(id))?;
                (Some(psnr(&img, &other)?), Some(ssim(&img, &other)?))
            }
            None => (None, None),
        };
        rows.push(ReportRow {
            id: id.clone(),
            psnr: psnr_v,
            ssim: ssim_v,
            entropy: entropy(&img),
            bpp: bpp(&img)?,
            ffs: opts.scorer.map(|s| ffs_score(s, &img)).transpose()?,
            external: opts.external.as_ref().map(|e| e.score(path)).transpose()?,
        });
    }
    Ok(QualityReport { meta, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{save_image, ImageBatch};
    use crate::tensor::Tensor;

    fn write_set(dir: &Path, n: usize) {
        fs::create_dir_all(dir).unwrap();
        for i in 0..n {
            let img =
                ImageBatch::new(Tensor::from_fn(&[1, 3, 24, 20], |k| ((k * (i + 3)) % 97) as f32 / 96.0)).unwrap();
            save_image(&img, dir.join(format!("img{i}.png"))).unwrap();
        }
    }

    #[test]
    fn self_reference_gives_perfect_scores() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("set");
        write_set(&d, 3);
        let r = evaluate(
            &d,
            &EvaluateOptions {
                reference: Some(&d),
                ..Default::default()
            },
        )
        .unwrap();
        let a = r.aggregates();
        assert_eq!(a.psnr, Some(f64::INFINITY));
        assert!((a.ssim.unwrap() - 1.0).abs() < 1e-9);
        assert!(r.to_table().contains("inf"));
    }

    #[test]
    fn columns_follow_inputs_and_means_recompute() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("set");
        write_set(&d, 5);
        let r = evaluate(&d, &EvaluateOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 5);
        assert_eq!(r.columns(), ["entropy", "bpp"]);
        let a = r.aggregates();
        let e: f64 = r.rows.iter().map(|x| x.entropy).sum::<f64>() / 5.0;
        let b: f64 = r.rows.iter().map(|x| x.bpp).sum::<f64>() / 5.0;
        assert_eq!(a.entropy, e);
        assert_eq!(a.bpp, b);
        let csv = r.to_csv();
        assert!(csv.contains("image,entropy,bpp\n"));
        assert!(!csv.contains("psnr"));
    }

    #[test]
    fn unmatched_files_are_listed() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        write_set(&a, 3);
        write_set(&b, 2);
        fs::rename(b.join("img1.png"), b.join("other.png")).unwrap();
        match evaluate(
            &a,
            &EvaluateOptions {
                reference: Some(&b),
                ..Default::default()
            },
        ) {
            Err(Error::Pairing(list)) => {
                assert!(list.contains(&"img1.png".to_string()));
                assert!(list.contains(&"img2.png".to_string()));
                assert!(list.contains(&"other.png (reference)".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn external_scorer_output_is_parsed() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("set");
        write_set(&d, 2);
        let ext = ExternalScorer {
            program: "sh".into(),
            args: vec!["-c".into(), "echo \"$0 score: 42.5\"".into()],
        };
        let r = evaluate(
            &d,
            &EvaluateOptions {
                external: Some(ext),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.aggregates().external, Some(42.5));
        let bad = ExternalScorer::parse("false").unwrap();
        assert!(matches!(bad.score(Path::new("x")), Err(Error::External(_))));
    }

    #[test]
    fn write_picks_format_from_extension() {
        let tmp = tempfile::tempdir().unwrap();
        let d = tmp.path().join("set");
        write_set(&d, 1);
        let r = evaluate(&d, &EvaluateOptions::default()).unwrap();
        r.write(&tmp.path().join("r.csv")).unwrap();
        r.write(&tmp.path().join("r.txt")).unwrap();
        assert!(fs::read_to_string(tmp.path().join("r.csv"))
            .unwrap()
            .contains("image,entropy"));
        assert!(fs::read_to_string(tmp.path().join("r.txt")).unwrap().contains("mean"));
    }
}
