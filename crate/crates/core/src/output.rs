//! CSV and manifest writers shared by the command-line subcommands.

use std::fs::File;
use std::io::{BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{rank_predictors, summarize_columns, PosteriorDraws};
use crate::selection::SweepResult;

pub const MANIFEST_FILE: &str = "manifest.json";

type CsvOut = csv::Writer<BufWriter<File>>;

/// Collects written file names so the manifest can list them.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, written: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Notes a file written by other means.
    pub fn record(&mut self, name: &str) {
        self.written.push(name.to_string());
    }

    fn csv(&mut self, name: &str) -> Result<CsvOut> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(csv::Writer::from_writer(BufWriter::new(file)))
    }

    /// Runs `body` against a fresh CSV writer and flushes it.
    pub fn write_csv<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut CsvOut) -> Result<()>,
    {
        let mut w = self.csv(name)?;
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(self.dir.join(name), e))
    }

    pub fn write_manifest(&mut self, manifest: &RunManifest) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn draw_header(causes: &[String]) -> Vec<String> {
    let mut h = vec!["draw".to_string(), "iteration".to_string()];
    h.extend(causes.iter().cloned());
    h
}

/// `csmf_draws.csv`, `individual_probs.csv` and `summary.csv`.
pub fn write_prediction(out: &mut OutputDir, draws: &PosteriorDraws) -> Result<()> {
    out.write_csv("csmf_draws.csv", |w| {
        w.write_record(draw_header(&draws.cause_names))?;
        for (s, row) in draws.csmf_draws.iter().enumerate() {
            let mut rec = vec![(s + 1).to_string(), draws.saved_iterations[s].to_string()];
            rec.extend(row.iter().map(|&v| fmt(v)));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;

    let n_causes = draws.n_causes();
    if let Some(probs) = &draws.individual_prob_draws {
        let n_draws = probs.len() as f64;
        out.write_csv("individual_probs.csv", |w| {
            let mut header = vec!["id".to_string()];
            header.extend(draws.cause_names.iter().cloned());
            header.push("most_likely".into());
            w.write_record(&header)?;
            for (i, id) in draws.target_ids.iter().enumerate() {
                let avg: Vec<f64> = (0..n_causes)
                    .map(|c| probs.iter().map(|d| d[i][c]).sum::<f64>() / n_draws)
                    .collect();
                let best = (0..n_causes).max_by(|&a, &b| avg[a].total_cmp(&avg[b]).then(b.cmp(&a))).unwrap_or(0);
                let mut rec = vec![id.clone()];
                rec.extend(avg.iter().map(|&v| fmt(v)));
                rec.push(draws.cause_names[best].clone());
                w.write_record(&rec)?;
            }
            Ok(())
        })?;
    }

    let summary = draws.csmf_summary();
    let mean_prob = draws
        .mean_probability_csmf_draws()
        .map(|d| summarize_columns(&d).iter().map(|s| s.mean).collect::<Vec<_>>());
    out.write_csv("summary.csv", |w| {
        w.write_record(["cause", "mean", "q025", "q975", "mean_prob"])?;
        for (c, s) in summary.iter().enumerate() {
            let mp = mean_prob.as_ref().map_or("NA".to_string(), |m| fmt(m[c]));
            w.write_record([draws.cause_names[c].clone(), fmt(s.mean), fmt(s.q025), fmt(s.q975), mp])?;
        }
        Ok(())
    })
}

/// `delta_draws.csv`, `ranking.csv` and, when present, the per-cause files.
pub fn write_delta(out: &mut OutputDir, draws: &PosteriorDraws) -> Result<()> {
    let delta = draws
        .delta_draws
        .as_ref()
        .ok_or_else(|| Error::input("no δ draws to write"))?;
    let excluded = draws.delta_excluded.clone().unwrap_or_default();
    out.write_csv("delta_draws.csv", |w| {
        w.write_record(draw_header(&draws.predictor_names))?;
        for (s, row) in delta.iter().enumerate() {
            let mut rec = vec![(s + 1).to_string(), draws.saved_iterations[s].to_string()];
            rec.extend(row.iter().map(|&v| fmt(v)));
            w.write_record(&rec)?;
        }
        Ok(())
    })?;
    let ranked = rank_predictors(delta, &draws.predictor_names, &excluded);
    out.write_csv("ranking.csv", |w| {
        w.write_record(["rank", "predictor", "mean", "q025", "q975", "excluded"])?;
        for r in &ranked {
            w.write_record([
                r.rank.to_string(),
                r.name.clone(),
                fmt(r.summary.mean),
                fmt(r.summary.q025),
                fmt(r.summary.q975),
                r.excluded.to_string(),
            ])?;
        }
        Ok(())
    })?;

    if let Some(per_cause) = &draws.delta_per_cause_draws {
        out.write_csv("delta_per_cause_draws.csv", |w| {
            w.write_record(["draw", "iteration", "cause", "predictor", "delta"])?;
            for (s, draw) in per_cause.iter().enumerate() {
                for (c, row) in draw.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        w.write_record([
                            (s + 1).to_string(),
                            draws.saved_iterations[s].to_string(),
                            draws.cause_names[c].clone(),
                            draws.predictor_names[j].clone(),
                            fmt(v),
                        ])?;
                    }
                }
            }
            Ok(())
        })?;
        out.write_csv("ranking_per_cause.csv", |w| {
            w.write_record(["cause", "rank", "predictor", "mean", "q025", "q975", "excluded"])?;
            for c in 0..draws.n_causes() {
                let cause_draws: Vec<Vec<f64>> = per_cause.iter().map(|d| d[c].clone()).collect();
                for r in rank_predictors(&cause_draws, &draws.predictor_names, &excluded) {
                    w.write_record([
                        draws.cause_names[c].clone(),
                        r.rank.to_string(),
                        r.name,
                        fmt(r.summary.mean),
                        fmt(r.summary.q025),
                        fmt(r.summary.q975),
                        r.excluded.to_string(),
                    ])?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

/// Long-format grid results plus a per-setting summary.
pub fn write_sweep(out: &mut OutputDir, stem: &str, result: &SweepResult, replicate: &str) -> Result<()> {
    out.write_csv(&format!("{stem}.csv"), |w| {
        w.write_record(["parameter", "setting", replicate, "accuracy"])?;
        for g in &result.grid {
            for (r, &acc) in g.accuracies.iter().enumerate() {
                w.write_record([result.parameter.clone(), fmt(g.setting), (r + 1).to_string(), fmt(acc)])?;
            }
            w.write_record([result.parameter.clone(), fmt(g.setting), "mean".into(), fmt(g.mean_accuracy)])?;
        }
        Ok(())
    })?;
    out.write_csv(&format!("{stem}_summary.csv"), |w| {
        w.write_record(["parameter", "setting", "mean_accuracy", "q025", "q975", "best"])?;
        for g in &result.grid {
            let s = crate::inference::Summary::of(&g.accuracies);
            w.write_record([
                result.parameter.clone(),
                fmt(g.setting),
                fmt(g.mean_accuracy),
                fmt(s.q025),
                fmt(s.q975),
                (g.setting == result.best).to_string(),
            ])?;
        }
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let k = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
        bytes += k as u64;
    }
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub model: Option<String>,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_at: u64,
    pub finished_at: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        let d = digest_file(&path).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn prediction_files_have_expected_shape() {
        let draws = PosteriorDraws {
            cause_names: vec!["a".into(), "b".into()],
            target_ids: vec!["x".into(), "y".into()],
            saved_iterations: vec![10, 20],
            csmf_draws: vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            individual_prob_draws: Some(vec![vec![vec![0.2, 0.8], vec![0.6, 0.4]]; 2]),
            ..PosteriorDraws::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        write_prediction(&mut out, &draws).unwrap();
        let csmf = std::fs::read_to_string(dir.path().join("csmf_draws.csv")).unwrap();
        assert_eq!(csmf, "draw,iteration,a,b\n1,10,0.5,0.5\n2,20,1,0\n");
        let ind = std::fs::read_to_string(dir.path().join("individual_probs.csv")).unwrap();
        assert_eq!(ind, "id,a,b,most_likely\nx,0.2,0.8,b\ny,0.6,0.4,a\n");
        assert_eq!(out.written(), ["csmf_draws.csv", "individual_probs.csv", "summary.csv"]);
    }
}
