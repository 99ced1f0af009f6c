use std::fmt::Write as _;

/// Observability record of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    /// Mean entropy of the teacher's anchor distribution; zero for BYOL.
    pub teacher_entropy: f64,
    pub lr: f64,
    pub wall_ms: f64,
}

/// One CSV row: a step, plus k-NN accuracies on evaluation steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub step: StepMetrics,
    pub teacher_knn: Option<f64>,
    pub student_knn: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "epoch,step,loss,H_pt,lr,teacher_knn,student_knn";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricRow {
    /// Wall-clock time is left out so the file is reproducible.
    pub fn csv_row(&self) -> String {
        let s = &self.step;
        format!(
            "{},{},{},{},{},{},{}",
            s.epoch,
            s.step,
            s.loss,
            s.teacher_entropy,
            s.lr,
            opt(self.teacher_knn),
            opt(self.student_knn)
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}
