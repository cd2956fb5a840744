//! Choosing representative items from cluster centers.

use std::collections::BTreeSet;

use super::kmeans::{dist2, Point2};
use crate::model::{ItemId, ProjectedPoint};

/// The in-tile point nearest to `center` (Euclidean, ties to the lowest id).
pub fn nearest_point(points: &[ProjectedPoint], center: Point2) -> Option<ItemId> {
    points
        .iter()
        .map(|p| (dist2(p.pos(), center), p.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Representatives of one tile: the inherited ones (standing in for the fixed
/// centers) plus the nearest point to every free center. Duplicates collapse,
/// so the result never exceeds `inherited.len() + free_centers.len()`.
pub fn select_representatives(
    points: &[ProjectedPoint],
    free_centers: &[Point2],
    inherited: &[ItemId],
) -> BTreeSet<ItemId> {
    let mut out: BTreeSet<ItemId> = inherited.iter().copied().collect();
    for &c in free_centers {
        if let Some(id) = nearest_point(points, c) {
            out.insert(id);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(coords: &[(u64, f32, f32)]) -> Vec<ProjectedPoint> {
        coords
            .iter()
            .map(|&(i, x, y)| ProjectedPoint::new(ItemId(i), x, y))
            .collect()
    }

    #[test]
    fn center_on_data_point() {
        let p = pts(&[(0, 0.1, 0.1), (1, 0.5, 0.5), (2, 0.9, 0.9)]);
        let r = select_representatives(&p, &[[0.5, 0.5]], &[]);
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec![ItemId(1)]);
    }

    #[test]
    fn shared_nearest_point_counts_once() {
        let p = pts(&[(0, 0.1, 0.1), (1, 0.5, 0.5), (2, 0.9, 0.9)]);
        let r = select_representatives(&p, &[[0.49, 0.5], [0.51, 0.5]], &[]);
        assert_eq!(r.len(), 1);
    }

    #[test]
    fn tie_goes_to_lowest_id() {
        // 4 and 9 are equidistant from the center
        let p = pts(&[(9, 0.25, 0.5), (4, 0.75, 0.5), (1, 0.0, 0.0)]);
        assert_eq!(nearest_point(&p, [0.5, 0.5]), Some(ItemId(4)));
    }

    #[test]
    fn inherited_always_kept() {
        let p = pts(&[(0, 0.1, 0.1), (1, 0.5, 0.5), (2, 0.9, 0.9)]);
        let r = select_representatives(&p, &[[0.1, 0.1]], &[ItemId(2), ItemId(0)]);
        assert_eq!(r.into_iter().collect::<Vec<_>>(), vec![ItemId(0), ItemId(2)]);
    }
}
