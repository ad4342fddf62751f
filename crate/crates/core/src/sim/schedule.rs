use super::config::EngineConfig;
use super::cost::{reduction, DenseWork, DwWork};
use super::timeline::{Dep, Engine, Timeline};
use crate::error::{Error, Result};
use crate::model::{Block, BlockKind, LayerSpec, ModelGraph};

/// A locally timed schedule plus the cycles the same work takes layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub timeline: Timeline,
    /// Sum of the isolated per-layer (or per-step) makespans.
    pub serial: u64,
    /// Graph nodes covered, in execution order.
    pub nodes: Vec<usize>,
}

impl Segment {
    pub fn makespan(&self) -> u64 {
        self.timeline.makespan()
    }
}

/// Off-chip traffic of a layer in bytes (int8 weights and activations).
pub(crate) fn layer_bytes(spec: &LayerSpec) -> f64 {
    let (hi, wi) = spec.spatial_in;
    let weights = if spec.attn.is_some() { 0 } else { spec.out_channels * reduction(spec) };
    (weights + spec.in_channels * hi * wi + spec.out_channels * spec.pixels_out()) as f64
}

/// Applies the bandwidth ceiling to a tile that moves `share` of `bytes`.
fn bw(cfg: &EngineConfig, compute: u64, bytes: f64, share: f64) -> u64 {
    match cfg.dram_bytes_per_cycle {
        Some(b) => compute.max((bytes * share / b).ceil() as u64),
        None => compute,
    }
}

fn node_of(graph: &ModelGraph, layer: usize) -> Result<usize> {
    graph
        .node_of_layer(layer)
        .ok_or_else(|| Error::Schedule(format!("layer `{}` has no graph node", graph.layers[layer].spec.name)))
}

/// Places a dense layer (or a slice of it) on both engines at once; returns the tile ids.
fn place_joint(
    tl: &mut Timeline,
    cfg: &EngineConfig,
    node: usize,
    work: DenseWork,
    bytes: f64,
    total_units: u64,
    label: &str,
    deps: &[Dep],
) -> Vec<usize> {
    let ready = tl.ready(deps);
    let mat_free = tl.free(Engine::Mat).max(ready);
    let rmac_free = tl.free(Engine::Rmac).max(ready);
    let (x, y) = work.split(cfg, mat_free, rmac_free);
    let l = cfg.l as u64;
    let mut ids = Vec::new();
    for (engine, units, per) in [(Engine::Mat, x, work.mat), (Engine::Rmac, y, work.rmac)] {
        if units == 0 || per == 0 {
            continue;
        }
        let share = (units * l) as f64 / total_units.max(1) as f64;
        let cost = bw(cfg, units * per, bytes, share.min(1.0));
        ids.push(tl.place(engine, node, format!("{label} {}", engine.name()), units, cost, deps.to_vec(), 0));
    }
    ids
}

/// A dense layer on both engines.
pub fn schedule_dense(graph: &ModelGraph, layer: usize, cfg: &EngineConfig) -> Result<Segment> {
    let spec = &graph.layers[layer].spec;
    let work = DenseWork::of(spec, cfg)?;
    let node = node_of(graph, layer)?;
    let mut tl = Timeline::default();
    place_joint(&mut tl, cfg, node, work, layer_bytes(spec), work.units, "all", &[]);
    let serial = tl.makespan();
    Ok(Segment { timeline: tl, serial, nodes: vec![node] })
}

/// A depthwise layer alone on the R-MAC engine.
pub fn schedule_depthwise(graph: &ModelGraph, layer: usize, cfg: &EngineConfig) -> Result<Segment> {
    let spec = &graph.layers[layer].spec;
    let work = DwWork::of(spec, cfg)?;
    let node = node_of(graph, layer)?;
    let mut tl = Timeline::default();
    let cost = bw(cfg, work.whole(cfg), layer_bytes(spec), 1.0);
    tl.place(Engine::Rmac, node, "all", work.units_per_row * work.rows as u64, cost, vec![], 0);
    Ok(Segment { serial: tl.makespan(), timeline: tl, nodes: vec![node] })
}

/// Global pooling as a row sum on the auxiliary adder tree.
pub fn schedule_pool(graph: &ModelGraph, node: usize, input_value: usize, cfg: &EngineConfig) -> Segment {
    let (c, h, w) = graph.value_shape(input_value);
    let cost = ((c * h * w) as u64).div_ceil((cfg.fanin() * cfg.l) as u64).max(1);
    let cost = bw(cfg, cost, (c * h * w + c) as f64, 1.0);
    let mut tl = Timeline::default();
    tl.place(Engine::AdderTree, node, "all", cost, cost, vec![], 0);
    Segment { serial: cost, timeline: tl, nodes: vec![node] }
}

/// Inter-layer pipeline of an optional PW1, a depthwise layer and the following
/// pointwise layer. `dw_row` overrides the depthwise row cost.
pub fn schedule_chain(
    graph: &ModelGraph,
    pw1: Option<usize>,
    dw: usize,
    pw2: usize,
    cfg: &EngineConfig,
    dw_row: Option<u64>,
) -> Result<Segment> {
    let mut tl = Timeline::default();
    let mut nodes = Vec::new();
    let mut serial = 0;
    let mut pw1_ids = Vec::new();
    if let Some(l1) = pw1 {
        let s = &graph.layers[l1].spec;
        let w = DenseWork::of(s, cfg)?;
        let node = node_of(graph, l1)?;
        pw1_ids = place_joint(&mut tl, cfg, node, w, layer_bytes(s), w.units, "all", &[]);
        serial += w.joint(cfg);
        nodes.push(node);
    }
    let dspec = &graph.layers[dw].spec;
    let dwork = DwWork::of(dspec, cfg)?;
    let dnode = node_of(graph, dw)?;
    nodes.push(dnode);
    let row_cost = dw_row.unwrap_or_else(|| dwork.row(cfg));
    let dbytes = layer_bytes(dspec);
    // Rows share waves of L units across cores; a row is done with the wave holding its last unit.
    let mut dw_ids = Vec::new();
    let mut row_done = Vec::with_capacity(dwork.rows);
    if row_cost > 0 {
        let deps: Vec<Dep> = pw1_ids.iter().map(|&i| Dep::Finish(i)).collect();
        let l = cfg.l as u64;
        let (wave_cost, per_row) = match dw_row {
            Some(c) => (c, l),
            None => (dwork.unit, dwork.units_per_row),
        };
        let mut waves_done = 0;
        for r in 0..dwork.rows {
            let waves = ((r as u64 + 1) * per_row).div_ceil(l);
            if waves > waves_done {
                let n = waves - waves_done;
                let cost = bw(cfg, n * wave_cost, dbytes, n as f64 * l as f64 / (per_row * dwork.rows as u64) as f64);
                let label = format!("rows ..={r} waves {waves_done}..{waves}");
                dw_ids.push(tl.place(Engine::Rmac, dnode, label, n, cost, deps.clone(), 0));
                waves_done = waves;
            }
            row_done.push(*dw_ids.last().expect("first row opens a wave"));
        }
    }
    serial += if dw_row.is_some() { row_cost * dwork.rows as u64 } else { dwork.whole(cfg) };

    let pspec = &graph.layers[pw2].spec;
    let pnode = node_of(graph, pw2)?;
    nodes.push(pnode);
    let pwork = DenseWork::of(pspec, cfg)?;
    serial += pwork.joint(cfg);
    let (h, w) = pspec.spatial_out;
    if h != dwork.rows {
        return Err(Error::Schedule(format!("layer `{}` does not consume `{}` row by row", pspec.name, dspec.name)));
    }
    let row_units = pwork.units / h as u64;
    let pbytes = layer_bytes(pspec);
    let dw_end = dw_ids.last().map_or(tl.makespan(), |&i| tl.ops[i].finish);
    let mut r = 0;
    while r < h && !dw_ids.is_empty() {
        let start = tl.free(Engine::Mat).max(tl.ops[row_done[r]].finish);
        if start >= dw_end {
            break;
        }
        let units = row_units.div_ceil(cfg.l as u64);
        let cost = bw(cfg, units * pwork.mat, pbytes, 1.0 / h as f64);
        tl.place(Engine::Mat, pnode, format!("row {r}"), units, cost, vec![Dep::Finish(row_done[r])], 0);
        r += 1;
    }
    if r < h {
        let rest = pwork.scaled(row_units * (h - r) as u64);
        let deps: Vec<Dep> = match dw_ids.last() {
            Some(&i) => vec![Dep::Finish(i)],
            None => pw1_ids.iter().map(|&i| Dep::Finish(i)).collect(),
        };
        place_joint(&mut tl, cfg, pnode, rest, pbytes, pwork.units, &format!("rows {r}..{h} x {w}"), &deps);
    }
    Ok(Segment { timeline: tl, serial, nodes })
}

/// Inter-layer pipeline of an MBConv (PW1, DW, PW2) or DSConv (DW, PW) block.
pub fn schedule_inter_layer(graph: &ModelGraph, block: &Block, cfg: &EngineConfig) -> Result<Segment> {
    match (block.kind, block.layers.as_slice()) {
        (BlockKind::MBConv, &[a, b, c]) => schedule_chain(graph, Some(a), b, c, cfg, None),
        (BlockKind::DSConv, &[a, b]) => schedule_chain(graph, None, a, b, cfg, None),
        _ => Err(Error::Schedule(format!("block `{}` is not a depthwise-separable chain", block.name))),
    }
}

/// One (source, head) slice of the attention layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnJob {
    pub tokens: usize,
    pub dim: usize,
}

/// Cycle costs of the five attention steps for one job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepCosts {
    /// KᵀV on the R-MAC engine.
    pub kv: u64,
    /// Row sum of K on the adder tree when it runs alone.
    pub ksum: u64,
    /// Q·k_sum and Q·(KᵀV) per engine: (MAT, R-MAC).
    pub divisor: (u64, u64),
    pub dividend: (u64, u64),
    /// Shift-based division on the shifter array.
    pub divide: u64,
}

impl StepCosts {
    pub fn of(job: AttnJob, cfg: &EngineConfig) -> Self {
        let (n, d) = (job.tokens, job.dim);
        let l = cfg.l as u64;
        let kv = DenseWork::raw(d, d, n, cfg);
        let iv = DenseWork::raw(n, 1, d, cfg);
        let iii = DenseWork::raw(n, d, d, cfg);
        StepCosts {
            kv: kv.rmac_only(cfg).max(1),
            ksum: ((n * d) as u64).div_ceil(cfg.fanin() as u64 * l).max(1),
            divisor: (iv.mat_only(cfg).max(1), iv.rmac_only(cfg).max(1)),
            dividend: (iii.mat_only(cfg).max(1), iii.rmac_only(cfg).max(1)),
            divide: ((n * d) as u64).div_ceil(cfg.shifter_count() as u64 * l).max(1),
        }
    }

    pub fn serial(&self, cfg: &EngineConfig) -> u64 {
        self.kv + self.ksum + self.divisor.0 + self.dividend.0 + self.divide + cfg.shift_drain
    }
}

/// Head-offset pipeline over attention jobs on the node `node`.
pub fn schedule_attention(jobs: &[AttnJob], node: usize, cfg: &EngineConfig, bytes: f64) -> Segment {
    let mut tl = Timeline::default();
    let share = 1.0 / jobs.len().max(1) as f64;
    let costs: Vec<StepCosts> = jobs.iter().map(|&j| StepCosts::of(j, cfg)).collect();
    let mut kv_ids = Vec::new();
    let mut ks_ids = Vec::new();
    for (j, c) in costs.iter().enumerate() {
        let i = tl.place(Engine::Rmac, node, format!("head {j} step i"), c.kv, bw(cfg, c.kv, bytes, share), vec![], 0);
        let cost = tl.ops[i].finish - tl.ops[i].start;
        ks_ids.push(tl.place(Engine::AdderTree, node, format!("head {j} step ii"), c.kv, cost, vec![Dep::Stream(i)], 0));
        kv_ids.push(i);
    }
    for (j, c) in costs.iter().enumerate() {
        let deps = vec![Dep::Finish(kv_ids[j]), Dep::Finish(ks_ids[j])];
        let ready = tl.ready(&deps);
        let finish_on = |e: Engine, t: u64| {
            let span = if e == Engine::Mat { c.divisor.0 + c.dividend.0 } else { c.divisor.1 + c.dividend.1 };
            tl.free(e).max(t) + span
        };
        let engine = if finish_on(Engine::Rmac, ready) < finish_on(Engine::Mat, ready) { Engine::Rmac } else { Engine::Mat };
        let pick = |p: (u64, u64)| if engine == Engine::Mat { p.0 } else { p.1 };
        let iv = tl.place(engine, node, format!("head {j} step iv"), c.divisor.0, pick(c.divisor), deps.clone(), 0);
        let iii = tl.place(engine, node, format!("head {j} step iii"), c.dividend.0, pick(c.dividend), vec![Dep::Finish(iv), deps[0]], 0);
        let v_deps = vec![Dep::Stream(iii), Dep::Finish(iv)];
        let start = tl.ready(&v_deps).max(tl.free(Engine::ShifterArray));
        let finish = (start + c.divide).max(tl.ops[iii].finish) + cfg.shift_drain;
        tl.ops.push(super::timeline::TileOp {
            engine: Engine::ShifterArray,
            node,
            tile: format!("head {j} step v"),
            units: c.divide,
            deps: v_deps,
            cost: c.divide + cfg.shift_drain,
            start,
            finish,
        });
    }
    let serial = costs.iter().map(|c| c.serial(cfg)).sum();
    Segment { timeline: tl, serial, nodes: vec![node] }
}

/// Intra-layer pipeline of the attention layer in an MSA block.
pub fn schedule_intra_layer(graph: &ModelGraph, block: &Block, cfg: &EngineConfig) -> Result<Segment> {
    let &[_, _, _, attn, _] = block.layers.as_slice() else {
        return Err(Error::Schedule(format!("block `{}` is not a lightweight MSA", block.name)));
    };
    if block.kind != BlockKind::MSA {
        return Err(Error::Schedule(format!("block `{}` is not a lightweight MSA", block.name)));
    }
    let spec = &graph.layers[attn].spec;
    let a = spec.attn.ok_or_else(|| Error::Schedule(format!("layer `{}` has no attention geometry", spec.name)))?;
    let job = AttnJob { tokens: spec.pixels_out(), dim: a.dim };
    let jobs = vec![job; a.sources * a.heads];
    Ok(schedule_attention(&jobs, node_of(graph, attn)?, cfg, layer_bytes(spec)))
}
