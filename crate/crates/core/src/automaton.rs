//! Aho-Corasick automaton for one or two patterns, with a complete goto table.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub(crate) struct Automaton {
    m: usize,
    goto: Vec<u32>,
    /// Bit `i` set when pattern `i` ends at this node (directly or through
    /// a suffix link).
    output: Vec<u8>,
    depth: Vec<usize>,
    parent: Vec<u32>,
    symbol: Vec<u8>,
    pattern_nodes: Vec<u32>,
}

impl Automaton {
    /// Builds the automaton. Identical patterns share a node and both bits.
    pub(crate) fn new(patterns: &[&[u8]], m: usize) -> Self {
        debug_assert!(!patterns.is_empty() && patterns.len() <= 8);
        let mut a = Automaton {
            m,
            goto: vec![u32::MAX; m],
            output: vec![0],
            depth: vec![0],
            parent: vec![0],
            symbol: vec![0],
            pattern_nodes: Vec::with_capacity(patterns.len()),
        };
        for (i, pat) in patterns.iter().enumerate() {
            let mut node = 0usize;
            for &b in pat.iter() {
                let slot = node * m + b as usize;
                if a.goto[slot] == u32::MAX {
                    let id = a.depth.len();
                    a.goto[slot] = id as u32;
                    a.goto.extend(core::iter::repeat_n(u32::MAX, m));
                    a.output.push(0);
                    a.depth.push(a.depth[node] + 1);
                    a.parent.push(node as u32);
                    a.symbol.push(b);
                }
                node = a.goto[slot] as usize;
            }
            a.output[node] |= 1 << i;
            a.pattern_nodes.push(node as u32);
        }

        let mut fail = vec![0u32; a.depth.len()];
        let mut queue = VecDeque::new();
        for b in 0..m {
            match a.goto[b] {
                u32::MAX => a.goto[b] = 0,
                child => queue.push_back(child as usize),
            }
        }
        while let Some(node) = queue.pop_front() {
            a.output[node] |= a.output[fail[node] as usize];
            for b in 0..m {
                let slot = node * m + b;
                let via_fail = a.goto[fail[node] as usize * m + b];
                match a.goto[slot] {
                    u32::MAX => a.goto[slot] = via_fail,
                    child => {
                        fail[child as usize] = via_fail;
                        queue.push_back(child as usize);
                    }
                }
            }
        }
        a
    }

    #[inline]
    pub(crate) fn step(&self, node: usize, symbol: u8) -> usize {
        self.goto[node * self.m + symbol as usize] as usize
    }

    #[inline]
    pub(crate) fn output(&self, node: usize) -> u8 {
        self.output[node]
    }

    pub(crate) fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    pub(crate) fn len(&self) -> usize {
        self.depth.len()
    }

    pub(crate) fn pattern_node(&self, pattern: usize) -> usize {
        self.pattern_nodes[pattern] as usize
    }

    pub(crate) fn parent(&self, node: usize) -> usize {
        self.parent[node] as usize
    }

    /// Last symbol on the path to `node` (meaningless for the root).
    pub(crate) fn symbol(&self, node: usize) -> u8 {
        self.symbol[node]
    }

    /// Node reached by reading `text` from the root.
    pub(crate) fn run(&self, text: &[u8]) -> usize {
        text.iter().fold(0, |node, &b| self.step(node, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_outputs(patterns: &[&[u8]], text: &[u8]) -> u8 {
        let mut mask = 0;
        for (i, p) in patterns.iter().enumerate() {
            if text.ends_with(p) {
                mask |= 1 << i;
            }
        }
        mask
    }

    #[test]
    fn outputs_match_suffix_check() {
        let patterns: [&[u8]; 2] = [&[0, 1, 0, 1], &[1, 0]];
        let a = Automaton::new(&patterns, 2);
        let text = [0u8, 1, 0, 1, 1, 0, 1, 0, 1, 0, 0, 1];
        let mut node = 0;
        for i in 0..text.len() {
            node = a.step(node, text[i]);
            assert_eq!(a.output(node), brute_outputs(&patterns, &text[..=i]));
        }
    }

    #[test]
    fn shared_pattern_sets_both_bits() {
        let patterns: [&[u8]; 2] = [&[2, 1, 2], &[2, 1, 2]];
        let a = Automaton::new(&patterns, 3);
        assert_eq!(a.pattern_node(0), a.pattern_node(1));
        assert_eq!(a.output(a.run(&[0, 2, 1, 2])), 0b11);
    }

    #[test]
    fn run_tracks_longest_suffix_in_trie() {
        let patterns: [&[u8]; 1] = [&[0, 0, 1]];
        let a = Automaton::new(&patterns, 2);
        assert_eq!(a.depth(a.run(&[1, 0, 0, 0])), 2);
        assert_eq!(a.depth(a.run(&[0, 1, 1])), 0);
        let n = a.run(&[0, 0]);
        assert_eq!(a.symbol(n), 0);
        assert_eq!(a.depth(a.parent(n)), 1);
    }
}
