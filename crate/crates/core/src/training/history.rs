use serde::Serialize;

use super::TrainError;

/// One optimizer step's scalar record. Components that a regime does not
/// compute are recorded as 0 so the column layout never changes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub l_s: f64,
    pub l_msk_main: f64,
    pub l_msk_flow: f64,
    pub l_ent: f64,
    pub l_d: f64,
    pub lambda1: f64,
    pub lr: f64,
    pub disc_acc: f64,
}

/// Per-epoch validation score on a held-out split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValRecord {
    pub epoch: u64,
    pub j_mean: f64,
}

/// Everything a run logs, exportable as fixed-column CSV.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub validation: Vec<ValRecord>,
}

impl TrainHistory {
    /// Appends one step, rejecting non-finite values immediately so a
    /// diverging run fails at the step that broke, not at export time.
    pub fn push(&mut self, record: StepRecord) -> Result<(), TrainError> {
        let values = [
            record.l_s,
            record.l_msk_main,
            record.l_msk_flow,
            record.l_ent,
            record.l_d,
            record.lambda1,
            record.lr,
            record.disc_acc,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteLoss { step: record.step });
        }
        self.steps.push(record);
        Ok(())
    }

    /// Step log with the pinned column order.
    pub fn csv(&self) -> String {
        let mut out =
            String::from("step,epoch,l_s,l_msk_main,l_msk_flow,l_ent,l_d,lambda1,lr,disc_acc\n");
        for r in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.epoch,
                r.l_s,
                r.l_msk_main,
                r.l_msk_flow,
                r.l_ent,
                r.l_d,
                r.lambda1,
                r.lr,
                r.disc_acc
            ));
        }
        out
    }

    /// Validation log, one row per evaluated epoch.
    pub fn validation_csv(&self) -> String {
        let mut out = String::from("epoch,j_mean\n");
        for r in &self.validation {
            out.push_str(&format!("{},{}\n", r.epoch, r.j_mean));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64) -> StepRecord {
        StepRecord {
            step,
            epoch: step / 4,
            l_s: 0.5,
            l_msk_main: 0.4,
            l_msk_flow: 0.1,
            l_ent: 0.0,
            l_d: 0.0,
            lambda1: 0.0,
            lr: 0.004,
            disc_acc: 0.0,
        }
    }

    #[test]
    fn csv_has_pinned_header_and_row_count() {
        let mut h = TrainHistory::default();
        for s in 0..3 {
            h.push(record(s)).unwrap();
        }
        h.validation.push(ValRecord { epoch: 0, j_mean: 0.8 });
        let csv = h.csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,epoch,l_s,l_msk_main,l_msk_flow,l_ent,l_d,lambda1,lr,disc_acc"
        );
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(h.validation_csv(), "epoch,j_mean\n0,0.8\n");
    }

    #[test]
    fn nonfinite_records_are_rejected_with_step_index() {
        let mut h = TrainHistory::default();
        let mut bad = record(17);
        bad.l_msk_main = f64::NAN;
        match h.push(bad) {
            Err(TrainError::NonFiniteLoss { step }) => assert_eq!(step, 17),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
        assert!(h.steps.is_empty());
    }
}
