//! Daily traffic tables: per-slice demand of the congested BS and the access
//! load profiles of the donors, both at 15-minute granularity.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, io_err, Error, Result};
use crate::topology::{Direction, NodeId, Throughput, Topology, CONGESTED_BS};

pub const INTERVALS_PER_DAY: usize = 96;
pub const INTERVAL_MINUTES: usize = 15;
/// Number of donor load profiles; the assignment rule cycles over them.
pub const N_LOAD_PROFILES: usize = 3;

pub const SLICES_FILE: &str = "slices.csv";
pub const LOADS_FILE: &str = "loads.csv";

/// Load profile of donor `bs`: `((bs - 1) mod 3) + 1`.
pub fn assign_profile(bs: NodeId) -> Result<usize> {
    if bs < 2 {
        return Err(domain(format!("donor ids start at 2, got {bs}")));
    }
    Ok((bs - 1) % N_LOAD_PROFILES + 1)
}

/// Interval index containing `hh:mm`.
pub fn interval_of(hour: usize, minute: usize) -> usize {
    (hour * 60 + minute) / INTERVAL_MINUTES
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    n_bs: usize,
    bs_node: NodeId,
    /// `slices[t][s - 1]`
    slices: Vec<Vec<Throughput>>,
    /// `loads[p - 1][t]`
    loads: Vec<Vec<Throughput>>,
}

impl ProfileSet {
    /// Builds a set from raw tables, checking shapes and signs.
    pub fn new(
        n_bs: usize,
        slices: Vec<Vec<Throughput>>,
        loads: Vec<Vec<Throughput>>,
    ) -> Result<Self> {
        let n_t = slices.len();
        if n_t == 0 {
            return Err(domain("profile set needs at least one interval"));
        }
        let n_s = slices[0].len();
        if n_s == 0 || slices.iter().any(|row| row.len() != n_s) {
            return Err(domain("every interval needs the same, non-zero, slice count"));
        }
        if loads.len() != N_LOAD_PROFILES || loads.iter().any(|p| p.len() != n_t) {
            return Err(domain(format!(
                "expected {N_LOAD_PROFILES} load profiles of {n_t} intervals"
            )));
        }
        let ok = |v: &Throughput| v.dl.is_finite() && v.ul.is_finite() && v.is_non_negative();
        if !slices.iter().flatten().chain(loads.iter().flatten()).all(ok) {
            return Err(domain("throughput values must be finite and non-negative"));
        }
        Ok(Self {
            n_bs,
            bs_node: CONGESTED_BS,
            slices,
            loads,
        })
    }

    /// A set with every demand and load equal to zero.
    pub fn zeros(n_bs: usize, n_slices: usize, n_intervals: usize) -> Self {
        Self::new(
            n_bs,
            vec![vec![Throughput::ZERO; n_slices]; n_intervals],
            vec![vec![Throughput::ZERO; n_intervals]; N_LOAD_PROFILES],
        )
        .expect("zero tables are valid")
    }

    pub fn with_n_bs(mut self, n_bs: usize) -> Self {
        self.n_bs = n_bs;
        self
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn n_slices(&self) -> usize {
        self.slices[0].len()
    }

    pub fn n_intervals(&self) -> usize {
        self.slices.len()
    }

    pub fn slice_demand(&self, t: usize, s: usize) -> Result<Throughput> {
        if s == 0 || s > self.n_slices() {
            return Err(domain(format!("unknown slice {s}")));
        }
        self.slices
            .get(t)
            .map(|row| row[s - 1])
            .ok_or_else(|| domain(format!("interval {t} out of range")))
    }

    pub fn set_slice_demand(&mut self, t: usize, s: usize, v: Throughput) -> Result<()> {
        self.slice_demand(t, s)?;
        if !v.is_non_negative() {
            return Err(domain("demand must be non-negative"));
        }
        self.slices[t][s - 1] = v;
        Ok(())
    }

    pub fn profile_load(&self, profile: usize, t: usize) -> Result<Throughput> {
        if profile == 0 || profile > N_LOAD_PROFILES {
            return Err(domain(format!("unknown load profile {profile}")));
        }
        self.loads[profile - 1]
            .get(t)
            .copied()
            .ok_or_else(|| domain(format!("interval {t} out of range")))
    }

    pub fn set_profile_load(&mut self, profile: usize, t: usize, v: Throughput) -> Result<()> {
        self.profile_load(profile, t)?;
        if !v.is_non_negative() {
            return Err(domain("load must be non-negative"));
        }
        self.loads[profile - 1][t] = v;
        Ok(())
    }

    pub fn bs_load(&self, bs: NodeId, t: usize) -> Result<Throughput> {
        if bs < 2 || bs > self.n_bs {
            return Err(domain(format!("unknown donor BS{bs}")));
        }
        self.profile_load(assign_profile(bs)?, t)
    }

    /// `(bs, load)` for every donor at interval `t`.
    pub fn donor_loads(&self, t: usize) -> Result<Vec<(NodeId, Throughput)>> {
        (2..=self.n_bs)
            .map(|bs| Ok((bs, self.bs_load(bs, t)?)))
            .collect()
    }

    pub fn aggregate_demand(&self, t: usize) -> Throughput {
        self.slices[t].iter().fold(Throughput::ZERO, |acc, d| {
            Throughput::new(acc.dl + d.dl, acc.ul + d.ul)
        })
    }

    /// Mean over the day of aggregate DL+UL demand, in Mbps.
    pub fn mean_aggregate_mbps(&self) -> f64 {
        let total: f64 = (0..self.n_intervals())
            .map(|t| {
                let a = self.aggregate_demand(t);
                a.dl + a.ul
            })
            .sum();
        total / self.n_intervals() as f64
    }

    pub fn save_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;

        let mut out = String::from("t,i,s,thdl_mbps,thul_mbps\n");
        for (t, row) in self.slices.iter().enumerate() {
            for (s, d) in row.iter().enumerate() {
                out.push_str(&format!("{t},{},{},{},{}\n", self.bs_node, s + 1, d.dl, d.ul));
            }
        }
        let path = dir.join(SLICES_FILE);
        fs::write(&path, out).map_err(io_err(&path))?;

        let mut out = String::from("profile,t,thdl_mbps,thul_mbps\n");
        for (p, rows) in self.loads.iter().enumerate() {
            for (t, l) in rows.iter().enumerate() {
                out.push_str(&format!("{},{t},{},{}\n", p + 1, l.dl, l.ul));
            }
        }
        let path = dir.join(LOADS_FILE);
        fs::write(&path, out).map_err(io_err(&path))
    }

    /// Reads `slices.csv` and `loads.csv` from `dir`. Every table must cover
    /// intervals 0..96 exactly once.
    pub fn load_csv(dir: impl AsRef<Path>, n_bs: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let slice_path = dir.join(SLICES_FILE);
        let slice_rows = read_table(&slice_path, &["t", "i", "s", "thdl_mbps", "thul_mbps"])?;
        let mut slices: BTreeMap<(usize, usize), Throughput> = BTreeMap::new();
        let mut bs_node = None;
        for (line, f) in &slice_rows {
            let err = |m: String| parse_err(&slice_path, *line, m);
            let t = parse_interval(&f[0]).map_err(err)?;
            let i: usize = f[1].parse().map_err(|_| err(format!("bad node id {:?}", f[1])))?;
            let s: usize = f[2].parse().map_err(|_| err(format!("bad slice id {:?}", f[2])))?;
            if s == 0 {
                return Err(err("slice ids start at 1".into()));
            }
            if *bs_node.get_or_insert(i) != i {
                return Err(err(format!("mixed serving nodes {} and {i}", bs_node.unwrap())));
            }
            let v = parse_pair(&f[3], &f[4]).map_err(err)?;
            if slices.insert((t, s), v).is_some() {
                return Err(err(format!("duplicate entry for t={t}, s={s}")));
            }
        }
        let n_s = slices.keys().map(|&(_, s)| s).max().unwrap_or(0);
        if n_s == 0 {
            return Err(parse_err(&slice_path, 1, "no slice rows".into()));
        }
        let last_line = slice_rows.last().map_or(1, |(l, _)| *l);
        let mut slice_table = vec![vec![Throughput::ZERO; n_s]; INTERVALS_PER_DAY];
        for s in 1..=n_s {
            for (t, row) in slice_table.iter_mut().enumerate() {
                row[s - 1] = *slices.get(&(t, s)).ok_or_else(|| {
                    parse_err(&slice_path, last_line, format!("slice {s} has no entry for t={t}"))
                })?;
            }
        }

        let load_path = dir.join(LOADS_FILE);
        let load_rows = read_table(&load_path, &["profile", "t", "thdl_mbps", "thul_mbps"])?;
        let mut loads: BTreeMap<(usize, usize), Throughput> = BTreeMap::new();
        for (line, f) in &load_rows {
            let err = |m: String| parse_err(&load_path, *line, m);
            let p: usize = f[0].parse().map_err(|_| err(format!("bad profile id {:?}", f[0])))?;
            if p == 0 || p > N_LOAD_PROFILES {
                return Err(err(format!("profile must be 1..={N_LOAD_PROFILES}, got {p}")));
            }
            let t = parse_interval(&f[1]).map_err(err)?;
            let v = parse_pair(&f[2], &f[3]).map_err(err)?;
            if loads.insert((p, t), v).is_some() {
                return Err(err(format!("duplicate entry for profile={p}, t={t}")));
            }
        }
        let last_line = load_rows.last().map_or(1, |(l, _)| *l);
        let mut load_table = vec![vec![Throughput::ZERO; INTERVALS_PER_DAY]; N_LOAD_PROFILES];
        for (p, rows) in load_table.iter_mut().enumerate() {
            for (t, v) in rows.iter_mut().enumerate() {
                *v = *loads.get(&(p + 1, t)).ok_or_else(|| {
                    parse_err(&load_path, last_line, format!("profile {} has no entry for t={t}", p + 1))
                })?;
            }
        }

        let mut set = Self::new(n_bs, slice_table, load_table)?;
        set.bs_node = bs_node.unwrap_or(CONGESTED_BS);
        Ok(set)
    }
}

fn parse_err(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn parse_interval(field: &str) -> Result<usize, String> {
    let t: usize = field
        .parse()
        .map_err(|_| format!("bad interval {field:?}"))?;
    if t >= INTERVALS_PER_DAY {
        return Err(format!("interval {t} outside 0..{INTERVALS_PER_DAY}"));
    }
    Ok(t)
}

fn parse_pair(dl: &str, ul: &str) -> Result<Throughput, String> {
    let parse = |f: &str| -> Result<f64, String> {
        let v: f64 = f.parse().map_err(|_| format!("bad throughput {f:?}"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("throughput must be a non-negative number, got {f}"));
        }
        Ok(v)
    };
    Ok(Throughput::new(parse(dl)?, parse(ul)?))
}

/// Rows of a headed CSV file with their 1-based line numbers.
fn read_table(path: &Path, header: &[&str]) -> Result<Vec<(u64, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!("expected header {:?}, found {:?}", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} fields", header.len())));
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

/// A Gaussian bump in interval units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    pub const fn new(center: f64, width: f64, amplitude: f64) -> Self {
        Self {
            center,
            width,
            amplitude,
        }
    }

    fn at(&self, t: f64) -> f64 {
        let z = (t - self.center) / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

/// Base level plus bumps, per direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub base: Throughput,
    pub dl_bumps: Vec<Bump>,
    pub ul_bumps: Vec<Bump>,
}

impl Shape {
    fn at(&self, t: f64, base_scale: f64) -> Throughput {
        let sum = |bumps: &[Bump]| bumps.iter().map(|b| b.at(t)).sum::<f64>();
        Throughput::new(
            self.base.dl * base_scale + sum(&self.dl_bumps),
            self.base.ul * base_scale + sum(&self.ul_bumps),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGenConfig {
    pub n_bs: usize,
    pub n_intervals: usize,
    pub capacity_mbps: f64,
    pub seed: u64,
    /// One shape per slice of BS1.
    pub slices: Vec<Shape>,
    /// Donor load shapes for profiles 1..=3.
    pub loads: Vec<Shape>,
    /// Half-open interval range in which aggregate UL must exceed capacity.
    pub ul_window: (usize, usize),
    /// Half-open interval range in which aggregate DL must exceed capacity.
    pub dl_window: (usize, usize),
    /// Distance kept between aggregate demand and capacity at window edges.
    pub window_margin_mbps: f64,
    /// Relative amplitude of seeded multiplicative noise on every value.
    pub jitter: f64,
    /// Amplitude of the day/night swing applied to base levels.
    pub diurnal_swing: f64,
    /// Reject tables in which some interval cannot serve all slices.
    pub require_feasible: bool,
}

impl Default for ProfileGenConfig {
    fn default() -> Self {
        let shape = |dl: f64, ul: f64, dl_bumps: Vec<Bump>, ul_bumps: Vec<Bump>| Shape {
            base: Throughput::new(dl, ul),
            dl_bumps,
            ul_bumps,
        };
        Self {
            n_bs: 7,
            n_intervals: INTERVALS_PER_DAY,
            capacity_mbps: 1000.0,
            seed: 7,
            slices: vec![
                shape(330.0, 230.0, vec![Bump::new(66.0, 8.0, 380.0)], vec![Bump::new(36.0, 12.0, 360.0)]),
                shape(260.0, 240.0, vec![Bump::new(66.0, 7.0, 340.0)], vec![Bump::new(35.0, 12.0, 330.0)]),
                shape(200.0, 190.0, vec![Bump::new(65.0, 8.0, 270.0)], vec![Bump::new(37.0, 11.0, 280.0)]),
            ],
            loads: vec![
                // light, with short heavy bursts
                shape(
                    120.0,
                    100.0,
                    vec![Bump::new(30.5, 1.2, 780.0), Bump::new(62.5, 1.2, 800.0), Bump::new(84.5, 1.2, 760.0)],
                    vec![Bump::new(30.5, 1.2, 760.0), Bump::new(62.5, 1.2, 700.0), Bump::new(84.5, 1.2, 740.0)],
                ),
                // moderate all day
                shape(
                    400.0,
                    370.0,
                    vec![Bump::new(52.0, 20.0, 80.0)],
                    vec![Bump::new(40.0, 20.0, 60.0)],
                ),
                // heavy around noon
                shape(
                    150.0,
                    140.0,
                    vec![Bump::new(48.0, 7.0, 760.0)],
                    vec![Bump::new(48.0, 7.0, 720.0)],
                ),
            ],
            ul_window: (interval_of(5, 30), interval_of(12, 30)),
            dl_window: (interval_of(14, 30), interval_of(18, 30)),
            window_margin_mbps: 25.0,
            jitter: 0.03,
            diurnal_swing: 0.3,
            require_feasible: true,
        }
    }
}

/// Generates the daily tables. Values are smooth shapes with seeded jitter,
/// rounded to 0.1 Mbps. Aggregate slice demand is then rescaled per interval
/// so that it exceeds the wired capacity exactly inside the configured
/// windows. With `require_feasible`, every interval is checked by exhaustive
/// search for an assignment of slices to paths that serves all of them.
pub fn generate_default_profiles(cfg: &ProfileGenConfig) -> Result<ProfileSet> {
    let gen_err = |m: String| Error::Generation(m);
    if cfg.slices.is_empty() {
        return Err(gen_err("need at least one slice".into()));
    }
    if cfg.loads.len() != N_LOAD_PROFILES {
        return Err(gen_err(format!("need {N_LOAD_PROFILES} load shapes")));
    }
    if cfg.n_intervals == 0 || cfg.capacity_mbps <= 0.0 {
        return Err(gen_err("interval count and capacity must be positive".into()));
    }
    for (name, (lo, hi)) in [("UL", cfg.ul_window), ("DL", cfg.dl_window)] {
        if lo > hi || hi > cfg.n_intervals {
            return Err(gen_err(format!("{name} window {lo}..{hi} out of range")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noisy = |v: f64| {
        let f = 1.0 + cfg.jitter * (2.0 * rng.random::<f64>() - 1.0);
        (v * f).max(0.0)
    };
    let n_t = cfg.n_intervals;
    let day = n_t as f64;
    // trough at 03:00, peak at 15:00
    let diurnal = |t: f64| {
        1.0 - cfg.diurnal_swing
            + cfg.diurnal_swing * (std::f64::consts::PI * (t - day * 0.3125) / (day / 2.0)).sin()
    };

    let mut slices = Vec::with_capacity(n_t);
    for t in 0..n_t {
        let mid = t as f64 + 0.5;
        let row: Vec<Throughput> = cfg
            .slices
            .iter()
            .map(|sh| {
                let v = sh.at(mid, diurnal(mid));
                Throughput::new(noisy(v.dl), noisy(v.ul))
            })
            .collect();
        slices.push(row);
    }
    let mut loads = Vec::with_capacity(N_LOAD_PROFILES);
    for sh in &cfg.loads {
        let rows: Vec<Throughput> = (0..n_t)
            .map(|t| {
                let v = sh.at(t as f64 + 0.5, 1.0);
                Throughput::new(
                    round1(noisy(v.dl).min(cfg.capacity_mbps)),
                    round1(noisy(v.ul).min(cfg.capacity_mbps)),
                )
            })
            .collect();
        loads.push(rows);
    }

    let cap = cfg.capacity_mbps;
    for (t, row) in slices.iter_mut().enumerate() {
        fit_window(row, t, cfg.dl_window, Direction::Dl, cap, cfg.window_margin_mbps)?;
        fit_window(row, t, cfg.ul_window, Direction::Ul, cap, cfg.window_margin_mbps)?;
    }

    let set = ProfileSet::new(cfg.n_bs, slices, loads)?;
    if cfg.require_feasible {
        let topo = Topology::build(cfg.n_bs, cap, cap)?;
        for t in 0..n_t {
            if !interval_servable(&topo, &set, t)? {
                return Err(gen_err(format!(
                    "no assignment of slices to backhaul paths serves interval {t}"
                )));
            }
        }
    }
    Ok(set)
}

/// Rescales one direction of an interval's slice demands so the aggregate
/// lies above `cap + margin` inside `window` and below `cap - margin`
/// outside, then rounds to 0.1 Mbps.
fn fit_window(
    row: &mut [Throughput],
    t: usize,
    window: (usize, usize),
    dir: Direction,
    cap: f64,
    margin: f64,
) -> Result<()> {
    let agg: f64 = row.iter().map(|v| v.get(dir)).sum();
    let inside = (window.0..window.1).contains(&t);
    let goal = if inside && agg < cap + margin {
        Some(cap + margin)
    } else if !inside && agg > cap - margin {
        Some(cap - margin)
    } else {
        None
    };
    if let Some(goal) = goal {
        if agg <= 0.0 {
            return Err(Error::Generation(format!("interval {t} has no demand to scale")));
        }
        for v in row.iter_mut() {
            v.set(dir, v.get(dir) * goal / agg);
        }
    }
    for v in row.iter_mut() {
        v.set(dir, round1(v.get(dir)));
    }
    Ok(())
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Exhaustive search over all choice vectors for the slices of interval `t`,
/// allocated in ascending slice order.
fn interval_servable(topo: &Topology, set: &ProfileSet, t: usize) -> Result<bool> {
    let mut topo = topo.clone();
    topo.release_interval();
    topo.set_bs_loads(set.donor_loads(t)?)?;
    let demands: Vec<Throughput> = (1..=set.n_slices())
        .map(|s| set.slice_demand(t, s))
        .collect::<Result<_>>()?;
    search(&mut topo, &demands, 0, t)
}

fn search(topo: &mut Topology, demands: &[Throughput], s: usize, t: usize) -> Result<bool> {
    if s == demands.len() {
        return Ok(true);
    }
    for choice in 1..=topo.n_bs() {
        let mut next = topo.clone();
        if next.try_allocate(s + 1, choice, demands[s], t)?.is_accepted()
            && search(&mut next, demands, s + 1, t)?
        {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_set() -> ProfileSet {
        generate_default_profiles(&ProfileGenConfig::default()).unwrap()
    }

    #[test]
    fn assignment_rule() {
        let map: Vec<_> = (2..=7).map(|bs| (bs, assign_profile(bs).unwrap())).collect();
        assert_eq!(map, vec![(2, 2), (3, 3), (4, 1), (5, 2), (6, 3), (7, 1)]);
        assert!(assign_profile(1).is_err());
        assert!(assign_profile(0).is_err());
    }

    #[test]
    fn clock_to_interval() {
        assert_eq!(interval_of(5, 30), 22);
        assert_eq!(interval_of(12, 30), 50);
        assert_eq!(interval_of(14, 30), 58);
        assert_eq!(interval_of(18, 30), 74);
    }

    #[test]
    fn congestion_windows_are_exact() {
        let p = default_set();
        for t in 0..INTERVALS_PER_DAY {
            let a = p.aggregate_demand(t);
            assert_eq!(a.ul > 1000.0, (22..50).contains(&t), "UL at {t}: {}", a.ul);
            assert_eq!(a.dl > 1000.0, (58..74).contains(&t), "DL at {t}: {}", a.dl);
        }
        assert!(p.aggregate_demand(30).ul > 1000.0);
        let night = p.aggregate_demand(0);
        assert!(night.dl <= 1000.0 && night.ul <= 1000.0);
    }

    #[test]
    fn load_profile_shapes() {
        let p = default_set();
        let series = |prof: usize| -> Vec<f64> {
            (0..INTERVALS_PER_DAY).map(|t| p.profile_load(prof, t).unwrap().dl).collect()
        };
        let (p1, p2, p3) = (series(1), series(2), series(3));
        let heavy = |s: &[f64]| s.iter().filter(|&&v| v > 700.0).count();
        // profile 1: heavy only in a few short bursts
        assert!(heavy(&p1) > 0 && heavy(&p1) <= 12);
        let median = |s: &[f64]| {
            let mut v = s.to_vec();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!(median(&p1) < 200.0);
        // profile 2: moderate all day
        assert!(p2.iter().all(|&v| (300.0..=600.0).contains(&v)));
        // profile 3: peak near noon
        let peak = (0..INTERVALS_PER_DAY).max_by(|&a, &b| p3[a].total_cmp(&p3[b])).unwrap();
        assert!((44..=52).contains(&peak), "profile 3 peaks at {peak}");
        assert!(p3[peak] > 800.0 && p3[0] < 300.0);

        // BS4 off-burst sits below the moderate profile
        assert!(p.bs_load(4, 10).unwrap().dl < p.bs_load(2, 10).unwrap().dl);
    }

    #[test]
    fn shared_profile_donors_agree() {
        let p = default_set();
        for t in 0..INTERVALS_PER_DAY {
            assert_eq!(p.bs_load(2, t).unwrap(), p.bs_load(5, t).unwrap());
            assert_eq!(p.bs_load(4, t).unwrap(), p.bs_load(7, t).unwrap());
            assert_eq!(p.bs_load(3, t).unwrap(), p.bs_load(6, t).unwrap());
        }
        assert!(p.bs_load(8, 0).is_err());
        assert!(p.bs_load(1, 0).is_err());
    }

    #[test]
    fn mean_demand_near_reference() {
        let m = default_set().mean_aggregate_mbps();
        assert!((m - 1479.0).abs() < 0.05 * 1479.0, "mean aggregate {m}");
    }

    #[test]
    fn lookups() {
        let p = default_set();
        let d = p.slice_demand(30, 1).unwrap();
        assert!(d.ul > 300.0 && d.ul > d.dl);
        assert!(p.slice_demand(96, 1).is_err());
        assert!(p.slice_demand(0, 0).is_err());
        assert!(p.slice_demand(0, 4).is_err());

        let z = ProfileSet::zeros(7, 3, 96);
        assert_eq!(z.slice_demand(10, 2).unwrap(), Throughput::ZERO);
        for t in 0..96 {
            assert_eq!(z.bs_load(3, t).unwrap(), Throughput::ZERO);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ProfileGenConfig::default();
        assert_eq!(generate_default_profiles(&cfg).unwrap(), generate_default_profiles(&cfg).unwrap());
        let other = ProfileGenConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_default_profiles(&cfg).unwrap(), generate_default_profiles(&other).unwrap());
    }

    #[test]
    fn overloaded_config_fails() {
        let mut cfg = ProfileGenConfig::default();
        for s in &mut cfg.slices {
            s.ul_bumps[0].amplitude *= 6.0;
        }
        assert!(matches!(generate_default_profiles(&cfg), Err(Error::Generation(_))));
        cfg.require_feasible = false;
        assert!(generate_default_profiles(&cfg).is_ok());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = default_set();
        p.save_csv(dir.path()).unwrap();
        assert_eq!(ProfileSet::load_csv(dir.path(), 7).unwrap(), p);
        let text = fs::read_to_string(dir.path().join(SLICES_FILE)).unwrap();
        assert!(text.starts_with("t,i,s,thdl_mbps,thul_mbps\n0,1,1,"));
    }

    fn write_pair(dir: &Path, slices: &str, loads: &str) {
        fs::write(dir.join(SLICES_FILE), slices).unwrap();
        fs::write(dir.join(LOADS_FILE), loads).unwrap();
    }

    fn zero_loads() -> String {
        let mut s = String::from("profile,t,thdl_mbps,thul_mbps\n");
        for p in 1..=3 {
            for t in 0..96 {
                s.push_str(&format!("{p},{t},0,0\n"));
            }
        }
        s
    }

    fn slices_text(n_t: usize, tweak: impl Fn(usize, &mut String)) -> String {
        let mut s = String::from("t,i,s,thdl_mbps,thul_mbps\n");
        for t in 0..n_t {
            let mut row = format!("{t},1,1,10,20\n");
            tweak(t, &mut row);
            s.push_str(&row);
        }
        s
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();

        write_pair(dir.path(), &slices_text(95, |_, _| {}), &zero_loads());
        let e = ProfileSet::load_csv(dir.path(), 7).unwrap_err();
        assert!(matches!(e, Error::Parse { .. }), "{e}");
        assert!(e.to_string().contains("t=95"), "{e}");

        write_pair(
            dir.path(),
            &slices_text(96, |t, r| if t == 4 { *r = "4,1,1,-3,20\n".into() }),
            &zero_loads(),
        );
        match ProfileSet::load_csv(dir.path(), 7).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 6),
            e => panic!("{e}"),
        }

        write_pair(
            dir.path(),
            &slices_text(96, |t, r| if t == 2 { r.push_str("2,1,1,1,1\n") }),
            &zero_loads(),
        );
        match ProfileSet::load_csv(dir.path(), 7).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("duplicate"));
            }
            e => panic!("{e}"),
        }

        write_pair(dir.path(), &slices_text(96, |t, r| if t == 9 { *r = "9,1,1,x\n".into() }), &zero_loads());
        assert!(matches!(ProfileSet::load_csv(dir.path(), 7), Err(Error::Parse { .. })));

        write_pair(dir.path(), &slices_text(96, |_, _| {}), &zero_loads());
        let ok = ProfileSet::load_csv(dir.path(), 7).unwrap();
        assert_eq!(ok.slice_demand(5, 1).unwrap(), Throughput::new(10.0, 20.0));
    }

    proptest! {
        #[test]
        fn csv_round_trip_arbitrary(values in proptest::collection::vec((0.0..5000.0f64, 0.0..5000.0f64), 96 * 2)) {
            let mut p = ProfileSet::zeros(7, 2, 96);
            for (i, &(dl, ul)) in values.iter().enumerate() {
                p.set_slice_demand(i / 2, i % 2 + 1, Throughput::new(dl, ul)).unwrap();
                p.set_profile_load(i % 3 + 1, i / 2, Throughput::new(ul, dl)).unwrap();
            }
            let dir = tempfile::tempdir().unwrap();
            p.save_csv(dir.path()).unwrap();
            prop_assert_eq!(ProfileSet::load_csv(dir.path(), 7).unwrap(), p);
        }
    }
}
