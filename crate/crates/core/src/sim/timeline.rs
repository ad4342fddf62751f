use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Mat,
    Rmac,
    AdderTree,
    ShifterArray,
}

impl Engine {
    pub const ALL: [Engine; 4] = [Engine::Mat, Engine::Rmac, Engine::AdderTree, Engine::ShifterArray];

    pub fn name(self) -> &'static str {
        match self {
            Engine::Mat => "mat",
            Engine::Rmac => "rmac",
            Engine::AdderTree => "adder_tree",
            Engine::ShifterArray => "shifter_array",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dep {
    /// Consumer starts after the producer finishes.
    Finish(usize),
    /// Consumer streams the producer's output: starts no earlier and finishes no earlier.
    Stream(usize),
}

/// One schedulable unit of work on one engine (all cores in lockstep).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileOp {
    pub engine: Engine,
    /// Graph node the tile belongs to.
    pub node: usize,
    /// Human-readable tile extent, e.g. `row 3` or `head 1 step iii`.
    pub tile: String,
    /// Work units covered by this tile (per core).
    pub units: u64,
    pub deps: Vec<Dep>,
    pub cost: u64,
    pub start: u64,
    pub finish: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub ops: Vec<TileOp>,
}

impl Timeline {
    /// Earliest start allowed by the dependencies.
    pub fn ready(&self, deps: &[Dep]) -> u64 {
        deps.iter()
            .map(|d| match *d {
                Dep::Finish(i) => self.ops[i].finish,
                Dep::Stream(i) => self.ops[i].start,
            })
            .max()
            .unwrap_or(0)
    }

    /// Latest finish of `engine`.
    pub fn free(&self, engine: Engine) -> u64 {
        self.ops.iter().filter(|o| o.engine == engine).map(|o| o.finish).max().unwrap_or(0)
    }

    /// Places a tile as early as its engine and dependencies allow, no earlier than `not_before`.
    pub fn place(&mut self, engine: Engine, node: usize, tile: impl Into<String>, units: u64, cost: u64, deps: Vec<Dep>, not_before: u64) -> usize {
        let start = self.ready(&deps).max(self.free(engine)).max(not_before);
        let stream_end = deps
            .iter()
            .filter_map(|d| match *d {
                Dep::Stream(i) => Some(self.ops[i].finish),
                Dep::Finish(_) => None,
            })
            .max()
            .unwrap_or(0);
        let finish = (start + cost).max(stream_end);
        self.ops.push(TileOp { engine, node, tile: tile.into(), units, deps, cost, start, finish });
        self.ops.len() - 1
    }

    pub fn makespan(&self) -> u64 {
        self.ops.iter().map(|o| o.finish).max().unwrap_or(0)
    }

    pub fn start(&self) -> u64 {
        self.ops.iter().map(|o| o.start).min().unwrap_or(0)
    }

    pub fn busy(&self, engine: Engine) -> u64 {
        self.ops.iter().filter(|o| o.engine == engine).map(|o| o.finish - o.start).sum()
    }

    /// Moves every tile `by` cycles later.
    pub fn shifted(mut self, by: u64) -> Self {
        for o in &mut self.ops {
            o.start += by;
            o.finish += by;
        }
        self
    }

    /// Appends another timeline, renumbering its dependencies.
    pub fn append(&mut self, other: Timeline) {
        let base = self.ops.len();
        for mut o in other.ops {
            for d in &mut o.deps {
                match d {
                    Dep::Finish(i) | Dep::Stream(i) => *i += base,
                }
            }
            self.ops.push(o);
        }
    }

    /// Dependency and resource audit; returns the number of violations found.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (id, o) in self.ops.iter().enumerate() {
            if o.cost < 1 {
                v.push(format!("tile {id} ({}) has zero cost", o.tile));
            }
            if o.finish < o.start + o.cost {
                v.push(format!("tile {id} ({}) finishes before its cost elapses", o.tile));
            }
            for d in &o.deps {
                let (i, ok) = match *d {
                    Dep::Finish(i) if i < id => (i, o.start >= self.ops[i].finish),
                    Dep::Stream(i) if i < id => (i, o.start >= self.ops[i].start && o.finish >= self.ops[i].finish),
                    Dep::Finish(i) | Dep::Stream(i) => (i, false),
                };
                if !ok {
                    v.push(format!("tile {id} ({}) violates its dependency on tile {i}", o.tile));
                }
            }
        }
        for e in Engine::ALL {
            let mut spans: Vec<(u64, u64, usize)> =
                self.ops.iter().enumerate().filter(|(_, o)| o.engine == e).map(|(i, o)| (o.start, o.finish, i)).collect();
            spans.sort_unstable();
            for w in spans.windows(2) {
                if w[1].0 < w[0].1 {
                    v.push(format!("tiles {} and {} overlap on {}", w[0].2, w[1].2, e.name()));
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().first() {
            None => Ok(()),
            Some(first) => Err(Error::Schedule(first.clone())),
        }
    }
}
