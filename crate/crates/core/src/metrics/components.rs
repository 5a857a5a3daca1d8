//! 18-connected component labelling of binary masks.

use super::MetricsError;
use crate::volgrid::VolumeGrid;

/// Offsets of the 18-neighbourhood that precede a voxel in x-fastest scan
/// order (face and edge neighbours; corners excluded).
const BACKWARD_18: [(isize, isize, isize); 9] = [
    (-1, 0, 0),
    (-1, -1, 0),
    (0, -1, 0),
    (1, -1, 0),
    (0, -1, -1),
    (-1, 0, -1),
    (0, 0, -1),
    (1, 0, -1),
    (0, 1, -1),
];

/// All 18 neighbour offsets.
pub fn neighbors_18() -> impl Iterator<Item = (isize, isize, isize)> {
    (-1..=1isize).flat_map(|dz| {
        (-1..=1isize).flat_map(move |dy| {
            (-1..=1isize).filter_map(move |dx| {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                (manhattan == 1 || manhattan == 2).then_some((dx, dy, dz))
            })
        })
    })
}

/// Labelled lesions of a mask. Label 0 is background; lesions are `1..=count`,
/// numbered by the first voxel met in x-fastest scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct LesionSet {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub labels: Vec<u32>,
    pub count: usize,
    /// Linear voxel indices of lesion `k` at position `k - 1`, in scan order.
    pub voxel_lists: Vec<Vec<usize>>,
}

impl LesionSet {
    pub fn voxels(&self, label: u32) -> &[usize] {
        &self.voxel_lists[label as usize - 1]
    }

    pub fn label_at(&self, index: usize) -> u32 {
        self.labels[index]
    }

    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn same_geometry(&self, other: &LesionSet) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    pub fn total_voxels(&self) -> usize {
        self.voxel_lists.iter().map(Vec::len).sum()
    }

    pub fn voxel_volume_ml(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2] / 1000.0
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let up = parent[parent[x as usize] as usize];
        parent[x as usize] = up;
        x = up;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass union-find labelling under 18-connectivity.
pub fn connected_components_18(mask: &VolumeGrid) -> Result<LesionSet, MetricsError> {
    if let Some((index, &value)) = mask
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        return Err(MetricsError::NonBinary { index, value });
    }
    let [nx, ny, nz] = mask.dims();
    let data = mask.data();
    let mut provisional = vec![0u32; data.len()];
    let mut parent: Vec<u32> = vec![0];

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if data[i] == 0.0 {
                    continue;
                }
                let mut label = 0u32;
                for &(dx, dy, dz) in &BACKWARD_18 {
                    let (xn, yn, zn) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if xn < 0 || yn < 0 || zn < 0 || xn >= nx as isize || yn >= ny as isize {
                        continue;
                    }
                    let j = xn as usize + nx * (yn as usize + ny * zn as usize);
                    let neighbor = provisional[j];
                    if neighbor == 0 {
                        continue;
                    }
                    label = if label == 0 {
                        find(&mut parent, neighbor)
                    } else {
                        union(&mut parent, label, neighbor)
                    };
                }
                if label == 0 {
                    label = parent.len() as u32;
                    parent.push(label);
                }
                provisional[i] = label;
            }
        }
    }

    let mut final_of_root = vec![0u32; parent.len()];
    let mut labels = vec![0u32; data.len()];
    let mut voxel_lists: Vec<Vec<usize>> = Vec::new();
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = find(&mut parent, p) as usize;
        if final_of_root[root] == 0 {
            voxel_lists.push(Vec::new());
            final_of_root[root] = voxel_lists.len() as u32;
        }
        let l = final_of_root[root];
        labels[i] = l;
        voxel_lists[l as usize - 1].push(i);
    }

    Ok(LesionSet {
        dims: mask.dims(),
        spacing: mask.spacing(),
        labels,
        count: voxel_lists.len(),
        voxel_lists,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::VolumeKind;

    fn mask(dims: [usize; 3], on: &[[usize; 3]]) -> VolumeGrid {
        let mut v = vec![0.0; dims.iter().product()];
        for c in on {
            v[c[0] + dims[0] * (c[1] + dims[1] * c[2])] = 1.0;
        }
        VolumeGrid::new(dims, [1.0; 3], VolumeKind::Mask, v).unwrap()
    }

    #[test]
    fn neighbourhood_has_eighteen_offsets() {
        assert_eq!(neighbors_18().count(), 18);
        let back: Vec<_> = neighbors_18()
            .filter(|&(dx, dy, dz)| (dz, dy, dx) < (0, 0, 0))
            .collect();
        assert_eq!(back.len(), 9);
        for o in back {
            assert!(BACKWARD_18.contains(&o));
        }
    }

    #[test]
    fn edge_neighbours_join_corners_do_not() {
        let s = connected_components_18(&mask([3, 3, 3], &[[0, 0, 0], [1, 1, 0]])).unwrap();
        assert_eq!(s.count, 1);
        let s = connected_components_18(&mask([3, 3, 3], &[[0, 0, 0], [1, 1, 1]])).unwrap();
        assert_eq!(s.count, 2);
        let s = connected_components_18(&mask([3, 3, 3], &[[0, 1, 0], [0, 0, 1]])).unwrap();
        assert_eq!(s.count, 1);
        let s = connected_components_18(&mask([3, 3, 3], &[])).unwrap();
        assert_eq!(s.count, 0);
    }

    #[test]
    fn labels_follow_scan_order() {
        // A U shape whose arms are first met separately, then merged below.
        let m = mask(
            [3, 3, 1],
            &[[0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 0], [0, 2, 0], [1, 2, 0], [2, 2, 0]],
        );
        let s = connected_components_18(&m).unwrap();
        assert_eq!(s.count, 1);
        assert_eq!(s.voxels(1).len(), 7);
        let m = mask([4, 1, 1], &[[3, 0, 0], [0, 0, 0]]);
        let s = connected_components_18(&m).unwrap();
        assert_eq!(s.labels, vec![1, 0, 0, 2]);
    }

    #[test]
    fn rejects_non_binary() {
        let v = VolumeGrid::new([2, 1, 1], [1.0; 3], VolumeKind::Prob, vec![0.0, 0.5]).unwrap();
        assert!(matches!(
            connected_components_18(&v),
            Err(MetricsError::NonBinary { index: 1, .. })
        ));
    }
}
