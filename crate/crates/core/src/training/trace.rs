use std::fmt::Write as _;

use super::Variant;
use crate::losses::{FitnessScore, LossReport, MutationKind};

/// One optimizer round.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub batch: usize,
    /// Discriminator loss of the last D step (adversarial variants).
    pub d: Option<LossReport>,
    /// Generator loss (ACGAN).
    pub g_loss: Option<f64>,
    /// Classification loss (CNN).
    pub class_loss: Option<f64>,
    /// Per-child fitness, by [`MutationKind::index`] (MFEGAN).
    pub fitness: Option<[FitnessScore; 3]>,
    pub survivor: Option<MutationKind>,
}

/// Per-batch training record plus wall-clock time per epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub variant: Variant,
    pub rows: Vec<TraceRow>,
    pub epoch_seconds: Vec<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainTrace {
    pub fn new(variant: Variant) -> Self {
        Self { variant, rows: Vec::new(), epoch_seconds: Vec::new() }
    }

    /// How often each kind survived, by [`MutationKind::index`].
    pub fn survivor_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        self.rows.iter().filter_map(|r| r.survivor).for_each(|k| c[k.index()] += 1);
        c
    }

    /// The per-batch record as CSV. Columns depend on the variant; timing is
    /// kept out so equal runs give equal bytes (see [`Self::timing_csv`]).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.variant {
            Variant::Mfegan => {
                out.push_str("epoch,batch,loss_source,loss_class,loss_total");
                for part in ["fq", "fd", "fm"] {
                    for k in MutationKind::ALL {
                        let _ = write!(out, ",{part}_{}", k.name());
                    }
                }
                out.push_str(",survivor\n");
            }
            Variant::Acgan => out.push_str("epoch,batch,loss_source,loss_class,loss_total,loss_generator\n"),
            Variant::Cnn => out.push_str("epoch,batch,loss_class\n"),
        }
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.epoch, r.batch);
            if self.variant != Variant::Cnn {
                let d = r.d;
                let _ = write!(
                    out,
                    ",{},{},{}",
                    opt(d.map(|d| d.source)),
                    opt(d.map(|d| d.class)),
                    opt(d.map(|d| d.total))
                );
            }
            match self.variant {
                Variant::Mfegan => {
                    let f = r.fitness;
                    for get in [|s: &FitnessScore| s.quality, |s: &FitnessScore| s.diversity, |s: &FitnessScore| s.total] {
                        for k in MutationKind::ALL {
                            let _ = write!(out, ",{}", opt(f.map(|f| get(&f[k.index()]))));
                        }
                    }
                    let _ = write!(out, ",{}", r.survivor.map(MutationKind::name).unwrap_or_default());
                }
                Variant::Acgan => {
                    let _ = write!(out, ",{}", opt(r.g_loss));
                }
                Variant::Cnn => {
                    let _ = write!(out, ",{}", opt(r.class_loss));
                }
            }
            out.push('\n');
        }
        out
    }

    /// `epoch,seconds` rows.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,seconds\n");
        for (e, s) in self.epoch_seconds.iter().enumerate() {
            let _ = writeln!(out, "{e},{s:.3}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_follow_variant() {
        let mut t = TrainTrace::new(Variant::Acgan);
        t.rows.push(TraceRow {
            d: Some(LossReport { source: 1.0, class: 2.0, total: 3.0 }),
            g_loss: Some(0.5),
            ..TraceRow::default()
        });
        let csv = t.to_csv();
        assert!(!csv.contains("survivor"));
        assert_eq!(csv.lines().nth(1), Some("0,0,1,2,3,0.5"));

        let mut t = TrainTrace::new(Variant::Mfegan);
        let s = FitnessScore::new(-1.0, 0.0, 0.5);
        t.rows.push(TraceRow { fitness: Some([s; 3]), survivor: Some(MutationKind::Heuristic), ..TraceRow::default() });
        let csv = t.to_csv();
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        assert_eq!(header.len(), 15);
        assert!(csv.lines().nth(1).unwrap().ends_with(",heuristic"));
        assert_eq!(t.survivor_counts(), [0, 1, 0]);
    }
}
