//! CSV writers for the summary tables. Every file opens with a `# ` meta
//! line; readers in this crate skip `#` lines.

use std::io::Write;

use crate::classify::ModelKind;
use crate::corpus::ClassCounts;
use crate::error::Result;
use crate::eval::{MeanStd, SignificanceTable, SubseqReport, TranscriptReport};
use crate::features::FeatureTable;
use crate::model::TrainConfig;
use crate::subseq::Context;

fn writer<W: Write>(mut w: W, meta: &str) -> Result<csv::Writer<W>> {
    writeln!(w, "# {meta}")?;
    Ok(csv::Writer::from_writer(w))
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn pct(part: usize, total: usize) -> String {
    if total == 0 {
        return String::new();
    }
    format!("{:.0}", 100.0 * part as f64 / total as f64)
}

/// Sample counts per class: transcripts, then each subset.
pub fn write_counts<W: Write>(w: W, meta: &str, transcripts: ClassCounts, subsets: &[(Context, ClassCounts)]) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["subset", "HC", "HC_pct", "CI", "CI_pct", "Total"])?;
    let rows = std::iter::once(("DB (transcripts)".to_string(), transcripts))
        .chain(subsets.iter().map(|(c, n)| (format!("DB-{c}"), *n)));
    for (name, c) in rows {
        wtr.write_record([
            name,
            c.hc.to_string(),
            pct(c.hc, c.total),
            c.ci.to_string(),
            pct(c.ci, c.total),
            c.total.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Best accuracy per subset: one column per subset, rows for mean and std.
pub fn write_subsequence_table<W: Write>(w: W, meta: &str, report: &SubseqReport) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    let mut header = vec!["metric".to_string()];
    header.extend(report.subsets.iter().map(|s| format!("M-{}", s.context)));
    wtr.write_record(&header)?;
    let row = |name: &str, f: &dyn Fn(&crate::eval::SubsetResult) -> String| {
        let mut r = vec![name.to_string()];
        r.extend(report.subsets.iter().map(f));
        r
    };
    wtr.write_record(row("accuracy", &|s| num(Some(s.best.mean_accuracy))))?;
    wtr.write_record(row("std", &|s| num(Some(s.best.std_accuracy))))?;
    wtr.write_record(row("gated_out", &|s| s.gated_out.to_string()))?;
    wtr.flush()?;
    Ok(())
}

/// Hyperparameters of each subset's best model.
pub fn write_subsequence_models<W: Write>(w: W, meta: &str, report: &SubseqReport, tc: &TrainConfig) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record([
        "model",
        "bidirectional",
        "gru_hidden",
        "layers",
        "ffn_sizes",
        "dropout",
        "epochs",
        "learning_rate",
        "momentum",
        "lambda",
        "batch_size",
    ])?;
    for s in &report.subsets {
        let c = &s.best_config;
        wtr.write_record([
            format!("M-{}", s.context),
            c.bidirectional.to_string(),
            c.gru_hidden.to_string(),
            c.ffn_layers.len().to_string(),
            c.ffn_layers.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
            c.dropout_p.to_string(),
            tc.epochs.to_string(),
            tc.lr.to_string(),
            tc.momentum.to_string(),
            tc.l2_lambda.to_string(),
            tc.batch_size.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn ms(m: &MeanStd) -> [String; 2] {
    [num(m.mean), num(m.std)]
}

/// Best configuration's four metrics per feature set.
pub fn write_transcript_table<W: Write>(w: W, meta: &str, report: &TranscriptReport) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record([
        "feature_set",
        "model",
        "acc",
        "acc_std",
        "prec",
        "prec_std",
        "sens",
        "sens_std",
        "spec",
        "spec_std",
        "p_vs_reference",
    ])?;
    for r in &report.results {
        let b = &r.best;
        let mut rec = vec![b.feature_set.to_string(), b.model.to_string()];
        for m in [&b.accuracy, &b.precision, &b.sensitivity, &b.specificity] {
            rec.extend(ms(m));
        }
        rec.push(r.p_vs_reference.map(|p| format!("{p:.6}")).unwrap_or_default());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Model, selected column count and SMOTE flag of each set's best configuration.
pub fn write_transcript_configs<W: Write>(w: W, meta: &str, report: &TranscriptReport) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["feature_set", "model", "n_features_selected", "k", "smote"])?;
    for r in &report.results {
        let b = &r.best;
        let (n, k) = match b.k {
            Some(k) => (b.n_features.to_string(), k.to_string()),
            None => ("-".to_string(), "-".to_string()),
        };
        wtr.write_record([b.feature_set.to_string(), b.model.to_string(), n, k, b.smote.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Accuracy with error bars, one row per feature set.
pub fn write_accuracy_plot<W: Write>(w: W, meta: &str, report: &TranscriptReport) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["feature_set", "acc_mean", "acc_std", "acc_low", "acc_high"])?;
    for r in &report.results {
        let a = &r.best.accuracy;
        let lo = a.mean.zip(a.std).map(|(m, s)| m - s);
        let hi = a.mean.zip(a.std).map(|(m, s)| m + s);
        wtr.write_record([r.best.feature_set.to_string(), num(a.mean), num(a.std), num(lo), num(hi)])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_predictions<W: Write>(w: W, meta: &str, report: &TranscriptReport) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    let mut header: Vec<String> = ["feature_set", "id", "seed", "fold", "truth", "prediction"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ModelKind::BASE.iter().map(|m| m.to_string()));
    wtr.write_record(&header)?;
    for p in &report.predictions {
        let mut rec = vec![
            p.feature_set.to_string(),
            p.id.clone(),
            p.seed.to_string(),
            p.fold.to_string(),
            p.truth.to_string(),
            p.prediction.to_string(),
        ];
        rec.extend(ModelKind::BASE.iter().map(|m| {
            p.votes
                .iter()
                .find(|(k, _)| k == m)
                .map(|(_, l)| l.to_string())
                .unwrap_or_default()
        }));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// F value of every candidate column on the whole table and whether it is
/// among the best configuration's top k.
pub fn write_selection<W: Write>(w: W, meta: &str, rows: &[(String, String, f64, bool)]) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["feature_set", "column", "f_value", "selected"])?;
    for (set, col, f, sel) in rows {
        wtr.write_record([set.clone(), col.clone(), format!("{f:.6}"), sel.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Count of significant features per distance and level.
pub fn write_significance<W: Write>(w: W, meta: &str, table: &SignificanceTable) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["distance", "token_level", "transcript_level", "token_tested", "transcript_tested"])?;
    for r in &table.rows {
        wtr.write_record([
            format!("D{}", r.distance),
            r.token_level.to_string(),
            r.transcript_level.to_string(),
            r.token_tested.to_string(),
            r.transcript_tested.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_significance_tests<W: Write>(w: W, meta: &str, table: &SignificanceTable) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["distance", "level", "feature", "t", "p"])?;
    for t in &table.tests {
        wtr.write_record([
            format!("D{}", t.distance),
            t.level.clone(),
            t.feature.clone(),
            format!("{:.6}", t.t),
            format!("{:.6e}", t.p),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Column counts per provenance.
pub fn write_feature_counts<W: Write>(w: W, meta: &str, table: &FeatureTable) -> Result<()> {
    let mut wtr = writer(w, meta)?;
    wtr.write_record(["provenance", "columns"])?;
    let mut counts: Vec<(String, usize)> = Vec::new();
    for c in &table.columns {
        let name = c.provenance.to_string();
        match counts.iter_mut().find(|(n, _)| *n == name) {
            Some(e) => e.1 += 1,
            None => counts.push((name, 1)),
        }
    }
    for (n, c) in counts {
        wtr.write_record([n, c.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}
