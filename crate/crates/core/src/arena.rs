//! Lazily grown realization of the marked tree.
//!
//! Every vertex is addressed by a 64-bit path key, `key(child i) =
//! mix(key(parent), i)`, and its offspring atom is a pure function of
//! `(environment seed, key)`. The tree is therefore fixed by the seed alone:
//! the arena is only a cache and may be dropped and regrown at will, in
//! any visit order, with identical results.

use std::ops::Range;
use std::sync::Arc;

use crate::env::{Atom, EnvironmentSpec};
use crate::error::{Error, Result};
use crate::stats::mix64;

pub type NodeId = u32;

pub const ROOT: NodeId = 0;

/// Default node budget of an arena (about 640 MB of nodes).
pub const DEFAULT_CAPACITY: usize = 1 << 24;

const UNEXPANDED: u32 = u32::MAX;
const NO_PARENT: NodeId = u32::MAX;
const ROOT_KEY: u64 = 0x243F_6A88_85A3_08D3;

/// A position of the walk: a tree vertex or the extra vertex above the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Site {
    RootParent,
    Node(NodeId),
}

/// One fixed environment: the spec together with the seed that selects the
/// tree. Cheap to clone.
#[derive(Clone, Debug)]
pub struct Realization {
    spec: Arc<EnvironmentSpec>,
    seed: u64,
    salt: u64,
}

impl Realization {
    pub fn new(spec: Arc<EnvironmentSpec>, seed: u64) -> Self {
        Self {
            spec,
            seed,
            salt: mix64(seed ^ 0x5EED_7EE5),
        }
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> &Arc<EnvironmentSpec> {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn root_key(&self) -> u64 {
        ROOT_KEY
    }

    #[inline]
    pub fn child_key(parent: u64, i: usize) -> u64 {
        mix64(parent ^ mix64(i as u64 + 1))
    }

    /// Offspring atom of the vertex with path key `key`.
    #[inline]
    pub fn atom(&self, key: u64) -> &Atom {
        let u = (mix64(self.salt ^ key) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.spec.atom_for(u)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    parent: NodeId,
    depth: u32,
    first_child: NodeId,
    n_children: u32,
    /// Mark of the edge from the parent; 1 for the root.
    mark: f64,
    child_mark_sum: f64,
    key: u64,
}

/// Cache of the expanded part of one [`Realization`]. Single-writer.
#[derive(Clone, Debug)]
pub struct TreeArena {
    real: Realization,
    nodes: Vec<Node>,
    capacity: usize,
}

impl TreeArena {
    pub fn new(real: Realization) -> Self {
        Self::with_capacity(real, DEFAULT_CAPACITY)
    }

    pub fn with_capacity(real: Realization, capacity: usize) -> Self {
        let mut arena = Self {
            real,
            nodes: Vec::new(),
            capacity: capacity.max(1),
        };
        arena.clear();
        arena
    }

    /// Convenience: arena over `spec` with environment seed `seed`.
    pub fn from_spec(spec: &EnvironmentSpec, seed: u64) -> Self {
        Self::new(Realization::new(Arc::new(spec.clone()), seed))
    }

    /// Forgets every expansion; only the root remains.
    pub fn clear(&mut self) {
        self.nodes.clear();
        let key = self.real.root_key();
        self.nodes.push(Node {
            parent: NO_PARENT,
            depth: 0,
            first_child: 0,
            n_children: UNEXPANDED,
            mark: 1.0,
            child_mark_sum: 0.0,
            key,
        });
    }

    pub fn realization(&self) -> &Realization {
        &self.real
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        self.real.spec()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_expanded(&self, id: NodeId) -> bool {
        self.nodes[id as usize].n_children != UNEXPANDED
    }

    /// Materializes the children of `id` if needed and returns their ids.
    pub fn expand(&mut self, id: NodeId) -> Result<Range<NodeId>> {
        let node = self.nodes[id as usize];
        if node.n_children != UNEXPANDED {
            return Ok(node.first_child..node.first_child + node.n_children);
        }
        let atom = self.real.atom(node.key);
        let first = self.nodes.len();
        if first + atom.nu > self.capacity {
            return Err(Error::ArenaCapacity {
                capacity: self.capacity,
            });
        }
        let mut sum = 0.0;
        for (i, &m) in atom.marks.iter().enumerate() {
            sum += m;
            self.nodes.push(Node {
                parent: id,
                depth: node.depth + 1,
                first_child: 0,
                n_children: UNEXPANDED,
                mark: m,
                child_mark_sum: 0.0,
                key: Realization::child_key(node.key, i),
            });
        }
        let n = &mut self.nodes[id as usize];
        n.first_child = first as NodeId;
        n.n_children = atom.nu as u32;
        n.child_mark_sum = sum;
        Ok(first as NodeId..(first + atom.nu) as NodeId)
    }

    /// Same as [`expand`](Self::expand) but returns the children as a list.
    pub fn expand_node(&mut self, id: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.expand(id)?.collect())
    }

    /// Children of an already expanded node (empty if unexpanded).
    pub fn children(&self, id: NodeId) -> Range<NodeId> {
        let n = &self.nodes[id as usize];
        if n.n_children == UNEXPANDED {
            0..0
        } else {
            n.first_child..n.first_child + n.n_children
        }
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        let p = self.nodes[id as usize].parent;
        (p != NO_PARENT).then_some(p)
    }

    pub fn depth(&self, id: NodeId) -> u32 {
        self.nodes[id as usize].depth
    }

    /// `A(x)`, the mark on the edge into `x`.
    pub fn mark(&self, id: NodeId) -> f64 {
        self.nodes[id as usize].mark
    }

    pub fn key(&self, id: NodeId) -> u64 {
        self.nodes[id as usize].key
    }

    /// `sum_i A(x^(i))` of an expanded node.
    pub fn child_mark_sum(&self, id: NodeId) -> f64 {
        self.nodes[id as usize].child_mark_sum
    }

    /// `omega(x, parent of x)`; requires `x` expanded.
    pub fn omega_parent(&self, id: NodeId) -> f64 {
        debug_assert!(self.is_expanded(id));
        1.0 / (1.0 + self.nodes[id as usize].child_mark_sum)
    }

    /// `omega(x, child)`; requires `x` expanded and `child` one of its children.
    pub fn omega_child(&self, id: NodeId, child: NodeId) -> f64 {
        debug_assert_eq!(self.parent(child), Some(id));
        self.mark(child) / (1.0 + self.nodes[id as usize].child_mark_sum)
    }

    /// `omega(root, parent of root)` under the derived rule.
    pub fn omega_root_parent(&mut self) -> Result<f64> {
        self.expand(ROOT)?;
        Ok(self.omega_parent(ROOT))
    }

    /// One step of the walk from `site`, driven by the uniform `u`.
    #[inline]
    pub fn step_with(&mut self, site: Site, u: f64) -> Result<Site> {
        let x = match site {
            Site::RootParent => return Ok(Site::Node(ROOT)),
            Site::Node(x) => x,
        };
        let kids = self.expand(x)?;
        let node = &self.nodes[x as usize];
        let total = 1.0 + node.child_mark_sum;
        let mut acc = u * total - 1.0;
        if acc < 0.0 {
            return Ok(match self.parent(x) {
                Some(p) => Site::Node(p),
                None => Site::RootParent,
            });
        }
        for c in kids.clone() {
            acc -= self.nodes[c as usize].mark;
            if acc < 0.0 {
                return Ok(Site::Node(c));
            }
        }
        // rounding: u * total landed on the upper edge
        Ok(Site::Node(kids.end - 1))
    }

    /// Expands every vertex up to generation `depth` (exclusive), breadth
    /// first. Returns the number of vertices at generation `depth`.
    pub fn expand_to_depth(&mut self, depth: u32) -> Result<usize> {
        let mut level = vec![ROOT];
        for _ in 0..depth {
            let mut next = Vec::new();
            for &x in &level {
                next.extend(self.expand(x)?);
            }
            level = next;
        }
        Ok(level.len())
    }
}
