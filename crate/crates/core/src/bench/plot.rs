//! Plot-ready CSVs and a matplotlib script that reads only those CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, SolverReport, Stat};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "epoch,mean,stderr";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlotKind {
    LossVsEpoch,
    VarianceVsEpoch,
    AccuracyVsEpoch,
    /// One row per recorded inner step; the first column is the step index.
    PsiVsIter,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::LossVsEpoch, PlotKind::VarianceVsEpoch, PlotKind::AccuracyVsEpoch, PlotKind::PsiVsIter];

    pub fn slug(self) -> &'static str {
        match self {
            PlotKind::LossVsEpoch => "loss",
            PlotKind::VarianceVsEpoch => "variance",
            PlotKind::AccuracyVsEpoch => "accuracy",
            PlotKind::PsiVsIter => "psi",
        }
    }

    fn y_label(self) -> &'static str {
        match self {
            PlotKind::LossVsEpoch => "objective minus best",
            PlotKind::VarianceVsEpoch => "gradient estimator variance",
            PlotKind::AccuracyVsEpoch => "test accuracy",
            PlotKind::PsiVsIter => "potential",
        }
    }

    fn x_label(self) -> &'static str {
        match self {
            PlotKind::PsiVsIter => "inner iteration",
            _ => "epoch",
        }
    }

    fn log_y(self) -> bool {
        matches!(self, PlotKind::LossVsEpoch | PlotKind::VarianceVsEpoch)
    }

    fn series(self, s: &SolverReport) -> Option<&[Stat]> {
        match self {
            PlotKind::LossVsEpoch => Some(&s.loss_gap),
            PlotKind::VarianceVsEpoch => Some(&s.variance),
            PlotKind::AccuracyVsEpoch => s.accuracy.as_deref(),
            PlotKind::PsiVsIter => s.psi.as_deref(),
        }
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.slug().eq_ignore_ascii_case(s) || format!("{k:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown plot kind `{s}` (expected loss, variance, accuracy or psi)")))
    }
}

pub fn csv_name(kind: PlotKind, label: &str) -> String {
    format!("{}_{label}.csv", kind.slug())
}

pub fn render_csv(stats: &[Stat]) -> String {
    let mut out = String::with_capacity(32 * (stats.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (k, s) in stats.iter().enumerate() {
        let _ = writeln!(out, "{k},{:e},{:e}", s.mean, s.stderr);
    }
    out
}

fn render_script(kind: PlotKind, files: &[(String, String)]) -> String {
    let mut out = String::new();
    out.push_str("import csv\nimport os\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n");
    out.push_str("HERE = os.path.dirname(os.path.abspath(__file__))\nSERIES = [\n");
    for (label, file) in files {
        let _ = writeln!(out, "    ({label:?}, {file:?}),");
    }
    out.push_str("]\n\nfig, ax = plt.subplots()\nfor label, name in SERIES:\n");
    out.push_str("    with open(os.path.join(HERE, name)) as fh:\n        rows = list(csv.DictReader(fh))\n");
    out.push_str("    x = [int(r[\"epoch\"]) for r in rows]\n    m = [float(r[\"mean\"]) for r in rows]\n    e = [float(r[\"stderr\"]) for r in rows]\n");
    out.push_str("    line, = ax.plot(x, m, label=label)\n");
    out.push_str("    ax.fill_between(x, [a - b for a, b in zip(m, e)], [a + b for a, b in zip(m, e)], color=line.get_color(), alpha=0.2)\n");
    if kind.log_y() {
        out.push_str("ax.set_yscale(\"symlog\", linthresh=1e-12)\n");
    }
    let _ = writeln!(out, "ax.set_xlabel({:?})\nax.set_ylabel({:?})", kind.x_label(), kind.y_label());
    let _ = writeln!(out, "ax.legend()\nfig.savefig(os.path.join(HERE, {:?}), dpi=150)", format!("{}.png", kind.slug()));
    out
}

/// Writes one CSV per solver carrying `kind` plus `plot_<kind>.py` into `dir`
/// and returns the paths written. Repeated calls write identical bytes.
pub fn emit_plot_data(report: &ExperimentReport, kind: PlotKind, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.solvers.is_empty() {
        return Err(Error::InvalidConfig("report has no solvers".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for s in &report.solvers {
        let Some(stats) = kind.series(s) else { continue };
        let name = csv_name(kind, &s.label);
        let path = dir.join(&name);
        fs::write(&path, render_csv(stats)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        files.push((s.label.clone(), name));
    }
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no solver in the report carries {} data", kind.slug())));
    }
    let script = dir.join(format!("plot_{}.py", kind.slug()));
    fs::write(&script, render_script(kind, &files)).map_err(|e| Error::io(&script, e))?;
    written.push(script);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ExperimentReport {
        let stat = |m: f64| Stat { mean: m, stderr: 0.0, count: 1 };
        ExperimentReport {
            best_objective: 0.0,
            solvers: vec![SolverReport {
                label: "ASVRG".into(),
                runs_total: 1,
                runs_used: 1,
                runs_diverged: 0,
                diverged_runs: vec![],
                loss_gap: vec![stat(1.0), stat(0.5), stat(0.25)],
                objective: vec![stat(1.0), stat(0.5), stat(0.25)],
                variance: vec![stat(0.0); 3],
                accuracy: None,
                psi: None,
            }],
        }
    }

    #[test]
    fn csv_layout_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_plot_data(&report(), PlotKind::LossVsEpoch, dir.path()).unwrap();
        let csv = fs::read_to_string(&paths[0]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1..].iter().all(|l| l.ends_with(",0e0")));
        let before: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
        emit_plot_data(&report(), PlotKind::LossVsEpoch, dir.path()).unwrap();
        let after: Vec<Vec<u8>> = paths.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn missing_series_and_unknown_kind() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(&report(), PlotKind::AccuracyVsEpoch, dir.path()).is_err());
        assert!("bogus".parse::<PlotKind>().is_err());
        assert_eq!("Psi".parse::<PlotKind>().unwrap(), PlotKind::PsiVsIter);
        assert_eq!("LossVsEpoch".parse::<PlotKind>().unwrap(), PlotKind::LossVsEpoch);
    }
}
