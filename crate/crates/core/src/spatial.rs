//! Bucket-grid index over integer pixel sites for exact nearest-neighbour queries.
//!
//! Distances are squared integer Euclidean distances, so comparisons are exact.
//! Ties are ordered by smaller row, then smaller column.

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Neighbour {
    pub dist2: u64,
    pub row: u32,
    pub col: u32,
    /// Position of the site in the slice the index was built from.
    pub index: u32,
}

pub struct SiteIndex {
    cell: usize,
    rows: usize,
    cols: usize,
    // CSR layout: buckets[start[b]..start[b + 1]] are the sites in bucket b.
    start: Vec<u32>,
    sites: Vec<(u32, u32, u32)>,
}

impl SiteIndex {
    /// `sites` are `(row, col)` pixel coordinates inside an `height`×`width` grid.
    pub fn new(sites: &[(usize, usize)], height: usize, width: usize) -> Self {
        let n = sites.len().max(1);
        let area = (height * width).max(1) as f64;
        // ~2 sites per bucket on average
        let cell = ((2.0 * area / n as f64).sqrt().ceil() as usize).clamp(1, height.max(width).max(1));
        let rows = height.div_ceil(cell).max(1);
        let cols = width.div_ceil(cell).max(1);
        let mut counts = vec![0u32; rows * cols + 1];
        for &(r, c) in sites {
            counts[(r / cell) * cols + c / cell + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let start = counts.clone();
        let mut fill = counts;
        let mut flat = vec![(0u32, 0u32, 0u32); sites.len()];
        for (i, &(r, c)) in sites.iter().enumerate() {
            let b = (r / cell) * cols + c / cell;
            flat[fill[b] as usize] = (r as u32, c as u32, i as u32);
            fill[b] += 1;
        }
        Self {
            cell,
            rows,
            cols,
            start,
            sites: flat,
        }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    fn bucket(&self, br: usize, bc: usize) -> &[(u32, u32, u32)] {
        let b = br * self.cols + bc;
        &self.sites[self.start[b] as usize..self.start[b + 1] as usize]
    }

    /// The `k` nearest sites to pixel `(row, col)`, sorted by (distance, row, col).
    pub fn k_nearest(&self, row: usize, col: usize, k: usize, out: &mut Vec<Neighbour>) {
        out.clear();
        let k = k.min(self.sites.len());
        if k == 0 {
            return;
        }
        let qr = (row / self.cell) as isize;
        let qc = (col / self.cell) as isize;
        let max_ring = self.rows.max(self.cols) as isize;
        for ring in 0..=max_ring {
            for br in (qr - ring)..=(qr + ring) {
                if br < 0 || br >= self.rows as isize {
                    continue;
                }
                let on_edge_row = br == qr - ring || br == qr + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) };
                let mut bc = qc - ring;
                while bc <= qc + ring {
                    if bc >= 0 && bc < self.cols as isize {
                        for &(r, c, i) in self.bucket(br as usize, bc as usize) {
                            let dr = r as i64 - row as i64;
                            let dc = c as i64 - col as i64;
                            let cand = Neighbour {
                                dist2: (dr * dr + dc * dc) as u64,
                                row: r,
                                col: c,
                                index: i,
                            };
                            if out.len() < k {
                                let pos = out.partition_point(|n| *n < cand);
                                out.insert(pos, cand);
                            } else if cand < out[k - 1] {
                                out.pop();
                                let pos = out.partition_point(|n| *n < cand);
                                out.insert(pos, cand);
                            }
                        }
                    }
                    bc += step;
                }
            }
            if out.len() == k {
                // Unvisited buckets are at least ring * cell + 1 pixels away on some axis.
                let bound = (ring as u64) * self.cell as u64 + 1;
                if bound * bound > out[k - 1].dist2 {
                    break;
                }
            }
        }
    }

    pub fn nearest(&self, row: usize, col: usize) -> Option<Neighbour> {
        let mut buf = Vec::with_capacity(1);
        self.k_nearest(row, col, 1, &mut buf);
        buf.first().copied()
    }
}
