//! Run directories, CSV tables and JSON summaries.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentConfig, FitOutcome, ReplicationRow, StudyKind};
use crate::error::Result;

/// Formats a float with the shortest round-trip representation.
pub(crate) fn num(v: f64) -> String {
    format!("{v}")
}

/// A header plus string records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, records: Vec::new() }
    }

    pub fn push(&mut self, record: Vec<String>) {
        debug_assert_eq!(record.len(), self.header.len());
        self.records.push(record);
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.records {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn replication_table(rows: &[ReplicationRow], d: usize) -> Table {
    let mut header: Vec<String> =
        ["replication", "seed", "gamma", "contamination", "status"].iter().map(|s| s.to_string()).collect();
    for name in ["escort", "estimate", "mc_se", "ci_lo", "ci_hi", "covered", "standardized", "ess", "rhat"] {
        header.extend((1..=d).map(|j| format!("{name}_{j}")));
    }
    header.extend(["acceptance".to_string(), "error".to_string()]);
    let mut table = Table::new(header);
    for row in rows {
        let mut rec = vec![
            row.replication.to_string(),
            row.seed.to_string(),
            num(row.gamma),
            num(row.contamination),
            if row.error.is_some() { "failed".into() } else { "ok".into() },
        ];
        match &row.fit {
            Some(f) => {
                let rhat = f.diagnostics.split_rhat.clone().unwrap_or_else(|| vec![f64::NAN; d]);
                for j in 0..d {
                    rec.push(num(f.escort[j]));
                }
                for j in 0..d {
                    rec.push(num(f.estimate.point[j]));
                }
                rec.extend(f.estimate.mc_se.iter().map(|v| num(*v)));
                rec.extend(f.ci.iter().map(|c| num(c.0)));
                rec.extend(f.ci.iter().map(|c| num(c.1)));
                rec.extend(f.covered.iter().map(|c| u8::from(*c).to_string()));
                rec.extend(f.asymptotic.standardized.iter().map(|v| num(*v)));
                rec.extend(f.estimate.ess.iter().map(|v| num(*v)));
                rec.extend(rhat.iter().map(|v| num(*v)));
                rec.push(num(f.estimate.acceptance_rate));
                rec.push(String::new());
            }
            None => {
                rec.extend(std::iter::repeat_n(String::new(), 9 * d + 1));
                rec.push(row.error.clone().unwrap_or_default());
            }
        }
        table.push(rec);
    }
    table
}

/// `<output_dir>/<study>/<timestamp>_<hash>/`.
pub(crate) struct RunDir {
    pub dir: PathBuf,
}

impl RunDir {
    pub fn create(cfg: &ExperimentConfig, study: StudyKind) -> Result<Self> {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        let base = cfg.output_dir.join(study.name());
        let stem = format!("{stamp}_{}", cfg.config_hash());
        let mut dir = base.join(&stem);
        let mut k = 1;
        while dir.exists() {
            dir = base.join(format!("{stem}-{k}"));
            k += 1;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn write_table(&self, name: &str, table: &Table) -> Result<()> {
        table.write(self.dir.join(name))
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    pub fn write_chains(&self, fit: &FitOutcome, label: &str, cfg: &ExperimentConfig) -> Result<()> {
        let chains_dir = self.dir.join("chains");
        fs::create_dir_all(&chains_dir)?;
        let hash = cfg.config_hash();
        for (k, chain) in fit.chains.iter().enumerate() {
            let stem = format!("{label}_gamma{}_chain{k}", fit.gamma);
            chain.write_csv(chains_dir.join(format!("{stem}.csv")))?;
            chain.write_sidecar(chains_dir.join(format!("{stem}.json")), &hash)?;
        }
        Ok(())
    }
}

/// Writes a gnuplot script skeleton for the study's `rows.csv`.
pub fn write_gnuplot_stub(dir: &Path, study: StudyKind) -> Result<()> {
    let body = match study {
        StudyKind::MonteCarloNormality | StudyKind::RobustnessSweep => {
            "# Histogram of standardized statistics against N(0,1).\n\
             set datafile separator ','\n\
             set key autotitle columnhead\n\
             binwidth = 0.25\n\
             bin(x) = binwidth * floor(x / binwidth)\n\
             plot 'rows.csv' using (bin(column('standardized_1'))):(1.0) smooth freq with boxes, \\\n\
             \x20    exp(-x**2 / 2) / sqrt(2 * pi) * binwidth * 200 title 'N(0,1)'\n"
        }
        _ => {
            "# Point estimates with credible intervals per gamma.\n\
             set datafile separator ','\n\
             set key autotitle columnhead\n\
             plot 'rows.csv' using 'gamma':'estimate_1':'ci_lo_1':'ci_hi_1' with yerrorbars\n"
        }
    };
    fs::write(dir.join("plot.gp"), body)?;
    Ok(())
}
