//! Mask vectorization by boundary following on the pixel lattice.
//!
//! Each 4-connected component becomes one polygon whose rings run along pixel
//! edges, so re-rasterizing with pixel-center sampling reproduces the mask
//! exactly. Where two foreground pixels touch only diagonally the trace turns
//! toward the pixel it is wrapping, which keeps them in separate rings (or lets
//! one ring touch itself at that vertex).

use std::collections::HashMap;

use super::{BitMask, GeoTransform, Point, Polygon};

/// Direction of travel in pixel space (x right, y down).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    East,
    South,
    West,
    North,
}

impl Dir {
    fn right(self) -> Dir {
        match self {
            Dir::East => Dir::South,
            Dir::South => Dir::West,
            Dir::West => Dir::North,
            Dir::North => Dir::East,
        }
    }

    fn left(self) -> Dir {
        match self {
            Dir::East => Dir::North,
            Dir::North => Dir::West,
            Dir::West => Dir::South,
            Dir::South => Dir::East,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    from: (u32, u32),
    to: (u32, u32),
    dir: Dir,
}

/// Vectorize every 4-connected component of `mask` into a map-space polygon.
pub fn polygonize(mask: &BitMask, transform: &GeoTransform) -> Vec<Polygon> {
    label_components(mask)
        .into_iter()
        .map(|pixels| trace_component(mask, &pixels, transform))
        .collect()
}

/// 4-connected components, each as its pixel list, ordered by first pixel in
/// row-major scan order.
pub(crate) fn label_components(mask: &BitMask) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = mask.dims();
    let mut seen = BitMask::new(w, h);
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for (c, r) in mask.ones() {
        if seen.get(c, r) {
            continue;
        }
        let mut pixels = Vec::new();
        seen.set(c, r, true);
        stack.push((c, r));
        while let Some((c, r)) = stack.pop() {
            pixels.push((c, r));
            let neighbors = [
                (c as i64 - 1, r as i64),
                (c as i64 + 1, r as i64),
                (c as i64, r as i64 - 1),
                (c as i64, r as i64 + 1),
            ];
            for (nc, nr) in neighbors {
                if mask.get_or_zero(nc, nr) && !seen.get(nc as u32, nr as u32) {
                    seen.set(nc as u32, nr as u32, true);
                    stack.push((nc as u32, nr as u32));
                }
            }
        }
        pixels.sort_unstable_by_key(|&(c, r)| (r, c));
        comps.push(pixels);
    }
    comps
}

fn trace_component(mask: &BitMask, pixels: &[(u32, u32)], transform: &GeoTransform) -> Polygon {
    // Boundary edges with the foreground pixel on the right-hand side.
    let mut edges = Vec::new();
    for &(c, r) in pixels {
        let (ci, ri) = (c as i64, r as i64);
        if !mask.get_or_zero(ci, ri - 1) {
            edges.push(Edge {
                from: (c, r),
                to: (c + 1, r),
                dir: Dir::East,
            });
        }
        if !mask.get_or_zero(ci + 1, ri) {
            edges.push(Edge {
                from: (c + 1, r),
                to: (c + 1, r + 1),
                dir: Dir::South,
            });
        }
        if !mask.get_or_zero(ci, ri + 1) {
            edges.push(Edge {
                from: (c + 1, r + 1),
                to: (c, r + 1),
                dir: Dir::West,
            });
        }
        if !mask.get_or_zero(ci - 1, ri) {
            edges.push(Edge {
                from: (c, r + 1),
                to: (c, r),
                dir: Dir::North,
            });
        }
    }
    let mut outgoing: HashMap<(u32, u32), Vec<usize>> = HashMap::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.from).or_default().push(i);
    }

    let mut used = vec![false; edges.len()];
    let mut outer: Option<Vec<(u32, u32)>> = None;
    let mut holes = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut ring = vec![edges[start].from];
        let mut cur = start;
        loop {
            used[cur] = true;
            let e = edges[cur];
            let candidates = &outgoing[&e.to];
            // Right turn first: wrapping the current pixel keeps diagonal
            // neighbours apart. At a saddle the two incoming edges pair with
            // the two outgoing ones, so this choice is a bijection.
            let next = [e.dir.right(), e.dir, e.dir.left()]
                .into_iter()
                .find_map(|d| candidates.iter().copied().find(|&i| edges[i].dir == d))
                .expect("every boundary vertex has an outgoing edge");
            if next == start {
                break;
            }
            debug_assert!(!used[next]);
            if edges[next].dir != e.dir {
                ring.push(e.to);
            }
            cur = next;
        }
        // Drop the start vertex if the ring passes straight through it.
        let closing_dir = edges[cur].dir;
        if closing_dir == edges[start].dir && ring.len() > 1 {
            ring.remove(0);
        }
        let first = ring[0];
        ring.push(first);
        if lattice_area2(&ring) > 0 {
            debug_assert!(outer.is_none(), "one outer ring per component");
            outer = Some(ring);
        } else {
            holes.push(ring);
        }
    }

    let to_map = |ring: &[(u32, u32)]| -> Vec<Point> {
        ring.iter()
            .map(|&(c, r)| {
                let (x, y) = transform.pixel_to_map(c as f64, r as f64);
                Point::new(x, y)
            })
            .collect()
    };
    let outer = outer.expect("component has an outer boundary");
    Polygon::from_rings_unchecked(to_map(&outer), holes.iter().map(|h| to_map(h)).collect())
}

/// Twice the signed area in pixel space (y down), positive for rings that
/// keep the foreground on the right.
fn lattice_area2(ring: &[(u32, u32)]) -> i64 {
    ring.windows(2)
        .map(|w| w[0].0 as i64 * w[1].1 as i64 - w[1].0 as i64 * w[0].1 as i64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::rasterize_unchecked;

    fn t() -> GeoTransform {
        GeoTransform::new(500_000.0, 2_000_000.0, 0.5, -0.5, "EPSG:32613").unwrap()
    }

    #[test]
    fn empty_mask_has_no_polygons() {
        assert!(polygonize(&BitMask::new(10, 10), &t()).is_empty());
    }

    #[test]
    fn square_block_becomes_square() {
        let m = BitMask::from_fn(8, 8, |c, r| (2..5).contains(&c) && (1..4).contains(&r));
        let polys = polygonize(&m, &t());
        assert_eq!(polys.len(), 1);
        let p = &polys[0];
        assert_eq!(p.exterior().len(), 5);
        assert!(p.holes().is_empty());
        let bb = p.bbox();
        assert_eq!(bb.width(), 1.5);
        assert_eq!(bb.height(), 1.5);
        assert_eq!(p.area(), 2.25);
    }

    #[test]
    fn diagonal_pixels_are_separate_components() {
        let m = BitMask::from_fn(4, 4, |c, r| (c, r) == (1, 1) || (c, r) == (2, 2));
        let polys = polygonize(&m, &t());
        assert_eq!(polys.len(), 2);
        assert_eq!(rasterize_unchecked(&polys, &t(), 4, 4), m);
    }

    #[test]
    fn ring_with_hole() {
        let m = BitMask::from_fn(5, 5, |c, r| (c, r) != (2, 2));
        let polys = polygonize(&m, &t());
        assert_eq!(polys.len(), 1);
        assert_eq!(polys[0].holes().len(), 1);
        assert_eq!(rasterize_unchecked(&polys, &t(), 5, 5), m);
    }

    #[test]
    fn pinched_component_round_trips() {
        // U shape closed by a diagonal contact: the enclosed background
        // leaks out through the pinch, so there is no hole.
        let rows = ["###.", "#.#.", "###.", "...."];
        let rows2 = ["##..", "#.#.", ".##.", "...."];
        for pattern in [rows, rows2] {
            let m = BitMask::from_fn(4, 4, |c, r| pattern[r as usize].as_bytes()[c as usize] == b'#');
            let polys = polygonize(&m, &t());
            assert_eq!(rasterize_unchecked(&polys, &t(), 4, 4), m, "{pattern:?}");
        }
    }
}
