use std::fmt;

use serde::Serialize;

/// Pipeline stages timed per stereo frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    EventProcessing,
    Tracking,
    Odometry,
    VoxelMap,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::EventProcessing, Stage::Tracking, Stage::Odometry, Stage::VoxelMap];

    fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::EventProcessing => "(a) event processing",
            Stage::Tracking => "(b) tracking",
            Stage::Odometry => "(c) odometry",
            Stage::VoxelMap => "(d) voxel map",
        }
    }
}

/// Raw per-frame samples in milliseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageTimes {
    stages: [Vec<f64>; 4],
    total: Vec<f64>,
}

impl StageTimes {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: Stage, ms: f64) {
        self.stages[stage.index()].push(ms);
    }

    pub fn record_total(&mut self, ms: f64) {
        self.total.push(ms);
    }

    pub fn samples(&self, stage: Stage) -> &[f64] {
        &self.stages[stage.index()]
    }

    pub fn totals(&self) -> &[f64] {
        &self.total
    }
}

/// Mean milliseconds per stage; `None` where no sample was recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct TimingReport {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
    pub total_ms: Option<f64>,
    pub frames: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn timing_report(times: &StageTimes) -> TimingReport {
    TimingReport {
        a: mean(&times.stages[0]),
        b: mean(&times.stages[1]),
        c: mean(&times.stages[2]),
        d: mean(&times.stages[3]),
        total_ms: mean(&times.total),
        frames: times.total.len(),
    }
}

impl TimingReport {
    pub fn get(&self, stage: Stage) -> Option<f64> {
        [self.a, self.b, self.c, self.d][stage.index()]
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |v| format!("{v:.3}"));
        writeln!(f, "{:<24} {:>10}", "stage", "mean ms")?;
        for s in Stage::ALL {
            writeln!(f, "{:<24} {:>10}", s.label(), cell(self.get(s)))?;
        }
        write!(f, "{:<24} {:>10}", format!("total ({} frames)", self.frames), cell(self.total_ms))
    }
}
