use std::path::{Path, PathBuf};

use super::plot::{confusion_image, line_chart, Canvas, Series, TRAIN, VAL};
use super::{RunReport, FOLD_COLUMNS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedFiles {
    pub curves: Vec<PathBuf>,
    pub matrices: Vec<PathBuf>,
    pub folds_csv: PathBuf,
    pub report_json: PathBuf,
    pub comparison_csv: Option<PathBuf>,
}

fn save(canvas: &Canvas, path: &Path) -> Result<()> {
    canvas.img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fold rows plus `Mean` and `Std` rows, four decimals.
pub(super) fn folds_table(report: &RunReport) -> Vec<Vec<String>> {
    let mut rows = vec![std::iter::once("fold").chain(FOLD_COLUMNS).map(String::from).collect()];
    for f in &report.folds {
        let s = f.scalars();
        let mut row = vec![(f.fold + 1).to_string()];
        row.extend(s[..5].iter().map(|v| format!("{v:.4}")));
        row.push(f.epoch.to_string());
        rows.push(row);
    }
    let stats = report.aggregate.scalars();
    rows.push(std::iter::once("Mean".to_string()).chain(stats.iter().map(|s| format!("{:.4}", s.mean))).collect());
    rows.push(std::iter::once("Std".to_string()).chain(stats.iter().map(|s| format!("{:.4}", s.std))).collect());
    rows
}

/// Write curves, confusion matrices, `folds.csv`, `report.json` and, when
/// baseline rows are present, `comparison.csv` into `out`.
pub fn render(report: &RunReport, out: &Path) -> Result<RenderedFiles> {
    report.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut curves = Vec::new();
    let mut matrices = Vec::new();
    for f in &report.folds {
        let k = f.fold + 1;
        let mut canvas = Canvas::new(960, 380);
        let pick = |g: fn(&crate::trainer::EpochRecord) -> f64| f.history.iter().map(g).collect::<Vec<_>>();
        line_chart(
            &mut canvas,
            (0, 0, 480, 380),
            &format!("Fold {k} accuracy"),
            &[
                Series { label: "train", values: pick(|r| r.train_acc), color: TRAIN },
                Series { label: "val", values: pick(|r| r.val_acc), color: VAL },
            ],
            true,
        );
        line_chart(
            &mut canvas,
            (480, 0, 480, 380),
            &format!("Fold {k} loss"),
            &[
                Series { label: "train", values: pick(|r| r.train_loss), color: TRAIN },
                Series { label: "val", values: pick(|r| r.val_loss), color: VAL },
            ],
            false,
        );
        let path = out.join(format!("fold{k}_curves.png"));
        save(&canvas, &path)?;
        curves.push(path);

        let title = format!("Fold {k} confusion matrix (accuracy {:.4})", f.test_accuracy);
        let path = out.join(format!("fold{k}_confusion.png"));
        save(&confusion_image(&title, &f.confusion, &report.classes), &path)?;
        matrices.push(path);
    }

    let folds_csv = out.join("folds.csv");
    write_csv(&folds_csv, &folds_table(report))?;

    let report_json = out.join("report.json");
    std::fs::write(&report_json, report.to_json()?).map_err(|e| Error::io(&report_json, e))?;

    let comparison_csv = if report.comparison.is_empty() {
        None
    } else {
        let path = out.join("comparison.csv");
        let mut rows = vec![vec!["method".to_string(), "train_accuracy".into(), "test_accuracy".into()]];
        rows.extend(
            report
                .comparison
                .iter()
                .map(|b| vec![b.method.clone(), b.train_accuracy.clone(), b.test_accuracy.clone()]),
        );
        write_csv(&path, &rows)?;
        Some(path)
    };

    Ok(RenderedFiles {
        curves,
        matrices,
        folds_csv,
        report_json,
        comparison_csv,
    })
}
