//! Ghost filling across simulated ranks.
//!
//! Every rank holds the full forest structure but only its own patches.
//! Boundary patches are shipped as frames (ghost layers plus the outer
//! interior layers) through per-pair FIFO mailboxes. The fill runs in three
//! steps around the exchange so that local work overlaps communication:
//!
//! 1. coarse regions and boundary fills of parallel-boundary patches from
//!    local sources, then pack and send;
//! 2. coarse regions, boundary fills and interpolation of patches away from
//!    the parallel boundary;
//! 3. after receiving: coarse regions between ghost patches of different
//!    owners (the indirect exchange), coarse regions from and into ghost
//!    patches, boundary fills, the remaining interpolation, final boundary
//!    fills.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::forest::{Forest, NeighborInfo, Quadrant};
use crate::ghost_serial::{execute_op, leaf_ops, GhostOp, LeafOps};
use crate::patch::{Layout, Patch, RegionKind};
use crate::timing::{Category, Timers};

/// True for cells shipped in a ghost-patch frame: all ghost cells and the
/// `2m` outermost interior layers.
pub fn in_frame(layout: &Layout, i: i32, j: i32) -> bool {
    let mx = layout.mx as i32;
    let d = 2 * layout.mg as i32;
    !(i >= d && i < mx - d && j >= d && j < mx - d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GhostPatchBuffer {
    pub leaf: usize,
    pub quad: Quadrant,
    pub source_rank: usize,
    pub kinds: [u8; 8],
    pub payload: Vec<f64>,
}

impl GhostPatchBuffer {
    pub fn pack(leaf: usize, patch: &Patch, source_rank: usize) -> Self {
        let l = patch.layout;
        let (m, mx) = (l.mg as i32, l.mx as i32);
        let mut payload = Vec::new();
        for j in -m..mx + m {
            for i in -m..mx + m {
                if in_frame(&l, i, j) {
                    payload.push(patch.get(i, j));
                }
            }
        }
        GhostPatchBuffer {
            leaf,
            quad: patch.quad,
            source_rank,
            kinds: patch.kinds().map(RegionKind::code),
            payload,
        }
    }

    /// Rebuilds the patch; cells outside the frame are NaN so that any read
    /// of them shows up in the results.
    pub fn unpack(&self, layout: Layout) -> Patch {
        let mut p = Patch::new(self.quad, layout);
        p.data_mut().fill(f64::NAN);
        let (m, mx) = (layout.mg as i32, layout.mx as i32);
        let mut values = self.payload.iter();
        for j in -m..mx + m {
            for i in -m..mx + m {
                if in_frame(&layout, i, j) {
                    p.set(i, j, *values.next().expect("frame size matches layout"));
                }
            }
        }
        p.set_kinds(
            self.kinds
                .map(|c| RegionKind::from_code(c).unwrap_or(RegionKind::Unset)),
        );
        p
    }

    pub fn bytes(&self) -> usize {
        8 * self.payload.len() + std::mem::size_of::<usize>() * 2 + 13 + 8
    }
}

/// Per-leaf data exchanged while regridding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tag {
    pub target: u8,
    pub spread: f64,
}

#[derive(Debug)]
pub enum Message {
    Ghost(GhostPatchBuffer),
    Tags(Vec<(usize, Tag)>),
    Patches(Vec<Patch>),
}

/// FIFO queue per ordered rank pair.
pub struct Mailbox {
    ranks: usize,
    queues: Vec<Mutex<VecDeque<Message>>>,
    trace: Option<Mutex<Vec<String>>>,
}

impl Mailbox {
    pub fn new(ranks: usize, trace: bool) -> Self {
        Mailbox {
            ranks,
            queues: (0..ranks * ranks)
                .map(|_| Mutex::new(VecDeque::new()))
                .collect(),
            trace: trace.then(|| Mutex::new(Vec::new())),
        }
    }

    pub fn send(&self, src: usize, dst: usize, msg: Message) {
        if let (Some(trace), Message::Ghost(buf)) = (&self.trace, &msg) {
            let q = buf.quad;
            trace.lock().unwrap().push(format!(
                "{src} {dst} {}:{}:{} {} {}",
                q.block,
                q.x,
                q.y,
                q.level,
                buf.bytes()
            ));
        }
        self.queues[src * self.ranks + dst]
            .lock()
            .unwrap()
            .push_back(msg);
    }

    /// Everything queued for `dst`, grouped by sender in rank order.
    pub fn receive_all(&self, dst: usize) -> Vec<(usize, Message)> {
        let mut out = Vec::new();
        for src in 0..self.ranks {
            let mut q = self.queues[src * self.ranks + dst].lock().unwrap();
            out.extend(q.drain(..).map(|m| (src, m)));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(|q| q.lock().unwrap().is_empty())
    }

    /// Trace lines `src dst quadrant level bytes` recorded so far.
    pub fn take_trace(&self) -> Vec<String> {
        self.trace
            .as_ref()
            .map(|t| std::mem::take(&mut *t.lock().unwrap()))
            .unwrap_or_default()
    }
}

/// Rank-dependent leaf sets and the shared per-leaf operation lists for one
/// forest and partition.
#[derive(Debug)]
pub struct ParallelPlan {
    pub forest_version: u64,
    pub leaf_ops: Vec<LeafOps>,
    pub lmin: u8,
    pub lmax: u8,
    pub owner: Vec<usize>,
    pub is_boundary: Vec<bool>,
    /// Local leaves with a remote neighbor, per rank.
    pub boundary: Vec<Vec<usize>>,
    /// Remote leaves adjacent to a local leaf, per rank.
    pub ghosts: Vec<Vec<usize>>,
    /// Boundary leaves of each rank with the ranks they are sent to.
    pub sends: Vec<Vec<(usize, SmallVec<[usize; 4]>)>>,
}

impl ParallelPlan {
    pub fn new(forest: &Forest, mx: i32) -> Result<Self> {
        let table = forest.neighbor_table()?;
        let p = forest.num_ranks();
        let n = forest.len();
        let owner: Vec<usize> = (0..n).map(|i| forest.owner(i)).collect();
        let mut is_boundary = vec![false; n];
        let mut ghosts = vec![BTreeSet::new(); p];
        let mut sends = vec![Vec::new(); p];
        for i in 0..n {
            let o = owner[i];
            let mut dests: SmallVec<[usize; 4]> = SmallVec::new();
            for nb in table[i].iter().flat_map(NeighborInfo::quads) {
                let o2 = owner[nb.index];
                if o2 != o {
                    is_boundary[i] = true;
                    ghosts[o].insert(nb.index);
                    if !dests.contains(&o2) {
                        dests.push(o2);
                    }
                }
            }
            if !dests.is_empty() {
                dests.sort_unstable();
                sends[o].push((i, dests));
            }
        }
        let boundary = (0..p)
            .map(|r| forest.rank_range(r).filter(|&i| is_boundary[i]).collect())
            .collect();
        Ok(ParallelPlan {
            forest_version: forest.version(),
            leaf_ops: leaf_ops(forest, mx)?,
            lmin: forest.min_level(),
            lmax: forest.max_level(),
            owner,
            is_boundary,
            boundary,
            ghosts: ghosts
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            sends,
        })
    }

    fn first_bc(&self, level: u8) -> bool {
        let end = if self.lmin == self.lmax {
            self.lmax + 1
        } else {
            self.lmax
        };
        (self.lmin..end).contains(&level)
    }

    fn second_bc(&self, level: u8) -> bool {
        (self.lmin + 1..=self.lmax).contains(&level)
    }
}

/// State of one simulated rank.
pub struct RankCtx {
    pub rank: usize,
    forest: Arc<Forest>,
    plan: Arc<ParallelPlan>,
    layout: Layout,
    /// Local patches and received ghost patches, by global leaf index.
    store: Vec<Option<Patch>>,
    began: bool,
    finalized: Vec<bool>,
    pub indirect: bool,
    pub timers: Timers,
}

impl RankCtx {
    pub fn new(
        rank: usize,
        forest: Arc<Forest>,
        plan: Arc<ParallelPlan>,
        layout: Layout,
        local: Vec<Patch>,
    ) -> Self {
        let range = forest.rank_range(rank);
        assert_eq!(local.len(), range.len());
        let mut store: Vec<Option<Patch>> = (0..forest.len()).map(|_| None).collect();
        for (i, p) in range.zip(local) {
            debug_assert_eq!(forest.leaves()[i], p.quad);
            store[i] = Some(p);
        }
        RankCtx {
            rank,
            forest,
            plan,
            layout,
            store,
            began: false,
            finalized: Vec::new(),
            indirect: true,
            timers: Timers::default(),
        }
    }

    pub fn forest(&self) -> &Arc<Forest> {
        &self.forest
    }

    pub fn local_range(&self) -> std::ops::Range<usize> {
        self.forest.rank_range(self.rank)
    }

    fn is_local(&self, leaf: usize) -> bool {
        self.plan.owner[leaf] == self.rank
    }

    pub fn patch(&self, leaf: usize) -> Option<&Patch> {
        self.store[leaf].as_ref()
    }

    pub fn local_patches(&self) -> impl Iterator<Item = (usize, &Patch)> {
        self.local_range()
            .map(move |i| (i, self.store[i].as_ref().expect("local patch present")))
    }

    pub fn local_patches_mut(&mut self) -> impl Iterator<Item = (usize, &mut Patch)> {
        let range = self.local_range();
        self.store[range.clone()]
            .iter_mut()
            .zip(range)
            .map(|(p, i)| (i, p.as_mut().expect("local patch present")))
    }

    /// Removes and returns the local patches in leaf order.
    pub fn take_local(&mut self) -> Vec<Patch> {
        let range = self.local_range();
        let out = self.store[range]
            .iter_mut()
            .map(|p| p.take().expect("local patch present"))
            .collect();
        self.store.iter_mut().for_each(|p| *p = None);
        out
    }

    /// Ghost patch received for a remote leaf.
    pub fn ghost(&self, leaf: usize) -> Option<&Patch> {
        if self.is_local(leaf) {
            None
        } else {
            self.store[leaf].as_ref()
        }
    }

    fn run(&mut self, op: &GhostOp) -> Result<()> {
        execute_op(op, self.store.as_mut_slice()).map_err(|e| match e {
            Error::MissingGhostPatch { leaf, .. } => Error::MissingGhostPatch {
                rank: self.rank,
                leaf,
            },
            other => other,
        })
    }

    fn run_filtered(
        &mut self,
        dsts: &[usize],
        pick: impl Fn(&LeafOps) -> &[GhostOp],
        keep: impl Fn(&Self, &GhostOp) -> bool,
    ) -> Result<()> {
        let plan = self.plan.clone();
        for &d in dsts {
            for op in pick(&plan.leaf_ops[d]) {
                if keep(self, op) {
                    self.run(op)?;
                }
            }
        }
        Ok(())
    }

    fn first_bc(&mut self, dsts: &[usize]) -> Result<()> {
        let plan = self.plan.clone();
        for &d in dsts {
            if plan.first_bc(self.forest.leaves()[d].level) {
                for op in &plan.leaf_ops[d].bc {
                    self.run(op)?;
                }
            }
        }
        Ok(())
    }

    fn second_bc(&mut self, d: usize) -> Result<()> {
        let plan = self.plan.clone();
        if plan.second_bc(self.forest.leaves()[d].level) {
            for op in &plan.leaf_ops[d].bc {
                self.run(op)?;
            }
        }
        Ok(())
    }

    /// Step 1: coarse regions and boundary fills of parallel-boundary
    /// patches from local sources.
    pub fn step1(&mut self) -> Result<()> {
        let start = Instant::now();
        let plan = self.plan.clone();
        let b = &plan.boundary[self.rank];
        self.run_filtered(b, |o| &o.coarse, |s, op| s.is_local(op.src().unwrap()))?;
        self.first_bc(b)?;
        self.timers
            .add(Category::GhostFill, start.elapsed().as_secs_f64());
        Ok(())
    }

    /// Packs every parallel-boundary patch and posts it to each rank owning
    /// one of its neighbors.
    pub fn exchange_begin(&mut self, mailbox: &Mailbox) {
        let start = Instant::now();
        let plan = self.plan.clone();
        for (leaf, dests) in &plan.sends[self.rank] {
            let buf = GhostPatchBuffer::pack(*leaf, self.store[*leaf].as_ref().unwrap(), self.rank);
            for &d in dests {
                mailbox.send(self.rank, d, Message::Ghost(buf.clone()));
            }
        }
        self.began = true;
        self.timers
            .add(Category::Comm, start.elapsed().as_secs_f64());
    }

    /// Step 2: everything that needs no remote data.
    pub fn step2(&mut self) -> Result<()> {
        let start = Instant::now();
        let plan = self.plan.clone();
        let interior: Vec<usize> = self
            .local_range()
            .filter(|&i| !plan.is_boundary[i])
            .collect();
        self.run_filtered(&interior, |o| &o.coarse, |_, _| true)?;
        self.first_bc(&interior)?;
        let local: Vec<usize> = self.local_range().collect();
        self.run_filtered(
            &local,
            |o| &o.interp,
            |_, op| {
                !plan.is_boundary[op.src().unwrap()]
                    && plan.owner[op.src().unwrap()] == plan.owner[op.dst()]
            },
        )?;
        self.finalized = vec![false; plan.owner.len()];
        for &d in &interior {
            let ready = plan.leaf_ops[d]
                .interp
                .iter()
                .all(|op| !plan.is_boundary[op.src().unwrap()]);
            if ready {
                self.second_bc(d)?;
                self.finalized[d] = true;
            }
        }
        self.timers
            .add(Category::GhostFill, start.elapsed().as_secs_f64());
        Ok(())
    }

    /// Receives all ghost patches sent to this rank.
    pub fn exchange_end(&mut self, mailbox: &Mailbox) -> Result<()> {
        if !self.began {
            return Err(Error::ExchangeNotStarted { rank: self.rank });
        }
        let start = Instant::now();
        self.began = false;
        for (_, msg) in mailbox.receive_all(self.rank) {
            match msg {
                Message::Ghost(buf) => {
                    let leaf = buf.leaf;
                    self.store[leaf] = Some(buf.unpack(self.layout));
                }
                other => {
                    return Err(Error::Unsupported(format!(
                        "rank {} received {other:?} during a ghost exchange",
                        self.rank
                    )))
                }
            }
        }
        let plan = self.plan.clone();
        if let Some(&leaf) = plan.ghosts[self.rank]
            .iter()
            .find(|&&g| self.store[g].is_none())
        {
            return Err(Error::MissingGhostPatch {
                rank: self.rank,
                leaf,
            });
        }
        self.timers
            .add(Category::Comm, start.elapsed().as_secs_f64());
        Ok(())
    }

    /// Coarse regions between ghost patches that came from different ranks.
    pub fn indirect_exchange(&mut self) -> Result<()> {
        if !self.indirect {
            return Ok(());
        }
        let start = Instant::now();
        let plan = self.plan.clone();
        let ghosts = &plan.ghosts[self.rank];
        self.run_filtered(
            ghosts,
            |o| &o.coarse,
            |s, op| {
                let src = op.src().unwrap();
                !s.is_local(src)
                    && s.store[src].is_some()
                    && plan.owner[src] != plan.owner[op.dst()]
            },
        )?;
        self.timers
            .add(Category::GhostFill, start.elapsed().as_secs_f64());
        Ok(())
    }

    /// Step 3: everything that depends on remote data.
    pub fn step3(&mut self) -> Result<()> {
        let start = Instant::now();
        let plan = self.plan.clone();
        let b = &plan.boundary[self.rank];
        let ghosts = &plan.ghosts[self.rank];
        self.run_filtered(b, |o| &o.coarse, |s, op| !s.is_local(op.src().unwrap()))?;
        self.run_filtered(ghosts, |o| &o.coarse, |s, op| s.is_local(op.src().unwrap()))?;
        self.first_bc(b)?;
        self.first_bc(ghosts)?;
        let local: Vec<usize> = self.local_range().collect();
        self.run_filtered(
            &local,
            |o| &o.interp,
            |s, op| {
                let src = op.src().unwrap();
                plan.is_boundary[src] || !s.is_local(src)
            },
        )?;
        for d in local {
            if !self.finalized.get(d).copied().unwrap_or(false) {
                self.second_bc(d)?;
            }
        }
        self.timers
            .add(Category::GhostFill, start.elapsed().as_secs_f64());
        Ok(())
    }

    /// Posts tags of parallel-boundary leaves to the ranks that see them.
    pub fn send_tags(&mut self, mailbox: &Mailbox, tags: &HashMap<usize, Tag>) {
        let start = Instant::now();
        let plan = self.plan.clone();
        let mut per_rank: HashMap<usize, Vec<(usize, Tag)>> = HashMap::new();
        for (leaf, dests) in &plan.sends[self.rank] {
            for &d in dests {
                per_rank.entry(d).or_default().push((*leaf, tags[leaf]));
            }
        }
        let mut dests: Vec<_> = per_rank.into_iter().collect();
        dests.sort_by_key(|(d, _)| *d);
        for (d, list) in dests {
            mailbox.send(self.rank, d, Message::Tags(list));
        }
        self.timers
            .add(Category::Comm, start.elapsed().as_secs_f64());
    }

    pub fn receive_tags(&mut self, mailbox: &Mailbox) -> Result<HashMap<usize, Tag>> {
        let start = Instant::now();
        let mut out = HashMap::new();
        for (_, msg) in mailbox.receive_all(self.rank) {
            match msg {
                Message::Tags(list) => out.extend(list),
                other => {
                    return Err(Error::Unsupported(format!(
                        "rank {} expected tags, received {other:?}",
                        self.rank
                    )))
                }
            }
        }
        self.timers
            .add(Category::Comm, start.elapsed().as_secs_f64());
        Ok(out)
    }
}

/// Execution of rank phases: on a thread pool, or one after another in a
/// given order.
#[derive(Clone, Debug)]
pub enum Schedule {
    Pool(usize),
    Sequential(Vec<usize>),
}

/// All simulated ranks of one run.
pub struct World {
    forest: Arc<Forest>,
    layout: Layout,
    plan: Arc<ParallelPlan>,
    ranks: Vec<RankCtx>,
    mailbox: Mailbox,
    pool: Option<rayon::ThreadPool>,
    schedule: Schedule,
    pub timers: Timers,
}

impl World {
    /// Distributes `patches` (in global leaf order) to the ranks of the
    /// forest's partition.
    pub fn new(
        forest: Forest,
        layout: Layout,
        patches: Vec<Patch>,
        threads: usize,
    ) -> Result<Self> {
        let p = forest.num_ranks();
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let schedule = if threads > 1 {
            Schedule::Pool(threads)
        } else {
            Schedule::Sequential((0..p).collect())
        };
        let mut world = World {
            plan: Arc::new(ParallelPlan::new(&forest, layout.mx as i32)?),
            forest: Arc::new(forest),
            layout,
            ranks: Vec::new(),
            mailbox: Mailbox::new(p, false),
            pool,
            schedule,
            timers: Timers::default(),
        };
        world.distribute(patches);
        Ok(world)
    }

    fn distribute(&mut self, mut patches: Vec<Patch>) {
        let p = self.forest.num_ranks();
        let indirect = self.ranks.first().is_none_or(|r| r.indirect);
        let mut ranks = Vec::with_capacity(p);
        for r in (0..p).rev() {
            let local = patches.split_off(self.forest.rank_range(r).start);
            ranks.push(RankCtx::new(
                r,
                self.forest.clone(),
                self.plan.clone(),
                self.layout,
                local,
            ));
        }
        ranks.reverse();
        for r in &mut ranks {
            r.indirect = indirect;
        }
        self.ranks = ranks;
    }

    /// Replaces forest and patches, e.g. after regridding.
    pub fn reset(&mut self, forest: Forest, patches: Vec<Patch>) -> Result<()> {
        if forest.num_ranks() != self.mailbox.ranks {
            self.mailbox = Mailbox::new(forest.num_ranks(), self.mailbox.trace.is_some());
        }
        self.plan = Arc::new(ParallelPlan::new(&forest, self.layout.mx as i32)?);
        self.forest = Arc::new(forest);
        self.distribute(patches);
        Ok(())
    }

    pub fn forest(&self) -> &Arc<Forest> {
        &self.forest
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn plan(&self) -> &Arc<ParallelPlan> {
        &self.plan
    }

    pub fn num_ranks(&self) -> usize {
        self.ranks.len()
    }

    pub fn rank(&self, r: usize) -> &RankCtx {
        &self.ranks[r]
    }

    pub fn ranks_mut(&mut self) -> &mut [RankCtx] {
        &mut self.ranks
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    pub fn set_schedule(&mut self, schedule: Schedule) {
        self.schedule = schedule;
    }

    pub fn set_indirect_exchange(&mut self, enabled: bool) {
        for r in &mut self.ranks {
            r.indirect = enabled;
        }
    }

    pub fn enable_trace(&mut self) {
        self.mailbox = Mailbox::new(self.mailbox.ranks, true);
    }

    /// Clones of all local patches in global leaf order.
    pub fn patches(&self) -> Vec<Patch> {
        self.ranks
            .iter()
            .flat_map(|r| r.local_patches().map(|(_, p)| p.clone()))
            .collect()
    }

    pub fn take_patches(&mut self) -> Vec<Patch> {
        self.ranks.iter_mut().flat_map(|r| r.take_local()).collect()
    }

    /// Runs `f` on every rank as one phase and charges the phase's wall
    /// time to categories in proportion to the ranks' own timers.
    pub fn phase<T: Send>(
        &mut self,
        f: impl Fn(&mut RankCtx, &Mailbox) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        let start = Instant::now();
        let before: Vec<Timers> = self.ranks.iter().map(|r| r.timers).collect();
        let mailbox = &self.mailbox;
        let out: Result<Vec<T>> = match (&self.schedule, &self.pool) {
            (Schedule::Pool(_), Some(pool)) => {
                let ranks = &mut self.ranks;
                pool.install(|| ranks.par_iter_mut().map(|r| f(r, mailbox)).collect())
            }
            (Schedule::Sequential(order), _) if order.len() == self.ranks.len() => {
                let mut slots: Vec<Option<Result<T>>> =
                    (0..self.ranks.len()).map(|_| None).collect();
                for &r in order {
                    slots[r] = Some(f(&mut self.ranks[r], mailbox));
                }
                slots.into_iter().map(|s| s.unwrap()).collect()
            }
            _ => self.ranks.iter_mut().map(|r| f(r, mailbox)).collect(),
        };
        let wall = start.elapsed().as_secs_f64();
        let mut spent = Timers::default();
        for (r, b) in self.ranks.iter().zip(before) {
            let mut d = r.timers;
            for c in Category::ALL {
                d.add(c, -b.get(c));
            }
            spent.merge(&d);
        }
        self.timers.add_proportional(wall, &spent);
        out
    }

    /// Fills every ghost cell of every local patch on all ranks.
    pub fn update_ghost(&mut self) -> Result<()> {
        self.phase(|r, mb| {
            r.step1()?;
            r.exchange_begin(mb);
            r.step2()
        })?;
        self.phase(|r, mb| {
            r.exchange_end(mb)?;
            r.indirect_exchange()?;
            r.step3()
        })?;
        Ok(())
    }

    /// Sends every rank's tags to neighboring ranks and returns, per rank,
    /// the tags it received for remote neighbor leaves.
    pub fn exchange_tags(
        &mut self,
        tags: Vec<HashMap<usize, Tag>>,
    ) -> Result<Vec<HashMap<usize, Tag>>> {
        let tags = Arc::new(tags);
        let t = tags.clone();
        self.phase(move |r, mb| {
            r.send_tags(mb, &t[r.rank]);
            Ok(())
        })?;
        self.phase(|r, mb| r.receive_tags(mb))
    }
}
