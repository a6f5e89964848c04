#![allow(dead_code)]

use memprof::rng::CounterRng;
use memprof::{Panel, TreatmentStep};
use rand_core::RngCore;

pub struct Gen(CounterRng);

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen(CounterRng::new(seed))
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.0.next_u64() % n
    }

    pub fn range(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.below(hi - lo + 1)
    }

    pub fn unit(&mut self) -> f64 {
        self.0.next_f64()
    }

    /// Roughly standard normal (sum of 12 uniforms).
    pub fn gauss(&mut self) -> f64 {
        (0..12).map(|_| self.unit()).sum::<f64>() - 6.0
    }
}

/// Random balanced panel with up to `max_rows` instances and up to
/// `max_checkpoints` checkpoints. Treatment steps sometimes fall between
/// checkpoints.
pub fn random_panel(seed: u64, max_rows: u64, max_checkpoints: u64) -> Panel {
    let mut rng = Gen::new(seed);
    let n_ck = rng.range(2, max_checkpoints);
    let mut grid = Vec::new();
    let mut step = rng.below(3);
    for _ in 0..n_ck {
        grid.push(step);
        step += rng.range(1, 4);
    }
    let n_groups = rng.range(1, (n_ck - 1).min(6));
    let mut treatments: Vec<u64> = Vec::new();
    while (treatments.len() as u64) < n_groups {
        let i = rng.range(1, n_ck - 1) as usize;
        let g = if rng.below(3) == 0 && grid[i] - 1 > grid[i - 1] {
            grid[i] - 1
        } else {
            grid[i]
        };
        if !treatments.contains(&g) {
            treatments.push(g);
        }
    }
    treatments.sort_unstable();

    let rows = rng.range(n_groups + 2, max_rows);
    let mut ids = Vec::new();
    let mut groups = Vec::new();
    for r in 0..rows {
        // First rows guarantee every group and the validation group exist.
        let group = if (r as usize) < treatments.len() {
            TreatmentStep::At(treatments[r as usize])
        } else if r as usize == treatments.len() || rng.below(3) == 0 {
            TreatmentStep::Never
        } else {
            TreatmentStep::At(treatments[rng.below(n_groups) as usize])
        };
        ids.push(format!("x{r}"));
        groups.push(group);
    }
    let mut outcomes = Vec::new();
    for _ in 0..rows {
        let fe = 2.0 * rng.gauss();
        for _ in 0..n_ck {
            outcomes.push(-3.0 + fe + rng.gauss());
        }
    }
    Panel::new(grid, ids, groups, outcomes).unwrap()
}

/// Mean by scanning every row, without the group index.
pub fn naive_mean(panel: &Panel, group: TreatmentStep, c: u64) -> f64 {
    let col = panel
        .checkpoint_grid()
        .iter()
        .position(|&x| x == c)
        .unwrap();
    let mut sum = 0.0;
    let mut count = 0usize;
    for row in 0..panel.n_instances() {
        if panel.groups()[row] == group {
            sum += panel.row(row)[col];
            count += 1;
        }
    }
    sum / count as f64
}

pub fn naive_baseline(panel: &Panel, g: u64) -> u64 {
    let mut best = None;
    for &c in panel.checkpoint_grid() {
        if c < g {
            best = Some(c);
        }
    }
    best.unwrap()
}

pub fn naive_diff(panel: &Panel, g: u64, c: u64) -> f64 {
    naive_mean(panel, TreatmentStep::At(g), c) - naive_mean(panel, TreatmentStep::Never, c)
}

pub fn naive_did(panel: &Panel, g: u64, c: u64) -> f64 {
    let b = naive_baseline(panel, g);
    let t = TreatmentStep::At(g);
    let v = TreatmentStep::Never;
    (naive_mean(panel, t, c) - naive_mean(panel, t, b))
        - (naive_mean(panel, v, c) - naive_mean(panel, v, b))
}

/// All admissible (g, c) pairs by enumeration.
pub fn admissible(panel: &Panel) -> Vec<(u64, u64)> {
    let mut out = Vec::new();
    for &g in panel.treatment_grid() {
        for &c in panel.checkpoint_grid() {
            if c >= g {
                out.push((g, c));
            }
        }
    }
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
