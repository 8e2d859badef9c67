//! Interpenetration volume on a 1 mm voxel lattice.
//!
//! Voxels are the unit cubes `[i, i+1) × [j, j+1) × [k, k+1)` mm; a voxel
//! belongs to a mesh when its center is inside (ray parity along +z).

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::par;
use crate::surface::{ColumnCaster, TriMesh};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penetration {
    pub volume_cm3: f64,
    pub voxels: usize,
    /// Overlapping voxels or a hand voxel face-adjacent to an object voxel.
    pub contact: bool,
}

/// Parity intervals of a column as a voxel bitmap over `k0..k0+nz`.
fn column(caster: &ColumnCaster, x: f64, y: f64, k0: i64, nz: usize) -> Vec<bool> {
    let zs = caster.crossings(x, y);
    let mut out = vec![false; nz];
    for pair in zs.chunks_exact(2) {
        // centers k + 0.5 with a < k + 0.5 < b
        let a = (pair[0] - 0.5).floor() as i64 + 1;
        let b = (pair[1] - 0.5).ceil() as i64 - 1;
        for k in a.max(k0)..=b.min(k0 + nz as i64 - 1) {
            out[(k - k0) as usize] = true;
        }
    }
    out
}

pub fn interpenetration_volume(hand: &TriMesh, obj: &TriMesh) -> Result<Penetration, Error> {
    for m in [hand, obj] {
        if m.is_empty() {
            return Err(Error::EmptyMesh);
        }
        m.check_watertight()?;
    }
    let (hl, hh) = hand.bounds();
    let (ol, oh) = obj.bounds();
    // one voxel of slack so touching surfaces register as contact
    let lo = hl.max_elem(&ol) - Vec3::new(1.0, 1.0, 1.0);
    let hi = hh.min_elem(&oh) + Vec3::new(1.0, 1.0, 1.0);
    if lo.x > hi.x || lo.y > hi.y || lo.z > hi.z {
        return Ok(Penetration {
            volume_cm3: 0.0,
            voxels: 0,
            contact: false,
        });
    }
    let (i0, j0, k0) = (lo.x.floor() as i64, lo.y.floor() as i64, lo.z.floor() as i64);
    let nx = (hi.x.ceil() as i64 - i0).max(1) as usize;
    let ny = (hi.y.ceil() as i64 - j0).max(1) as usize;
    let nz = (hi.z.ceil() as i64 - k0).max(1) as usize;
    let hc = ColumnCaster::new(hand);
    let oc = ColumnCaster::new(obj);
    let cols = par::map_range(nx * ny, |c| {
        let (x, y) = ((c / ny) as i64 + i0, (c % ny) as i64 + j0);
        let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
        (column(&hc, cx, cy, k0, nz), column(&oc, cx, cy, k0, nz))
    });
    let at = |i: isize, j: isize, k: isize| -> Option<&(Vec<bool>, Vec<bool>)> {
        if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
            None
        } else {
            Some(&cols[i as usize * ny + j as usize])
        }
    };
    let mut voxels = 0;
    let mut touching = false;
    for i in 0..nx {
        for j in 0..ny {
            let (h, o) = &cols[i * ny + j];
            for k in 0..nz {
                if !h[k] {
                    continue;
                }
                if o[k] {
                    voxels += 1;
                    continue;
                }
                if touching {
                    continue;
                }
                let (i, j, k) = (i as isize, j as isize, k as isize);
                for (di, dj, dk) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
                    if at(i + di, j + dj, k + dk).is_some_and(|c| c.1[(k + dk) as usize]) {
                        touching = true;
                    }
                }
            }
        }
    }
    Ok(Penetration {
        volume_cm3: voxels as f64 / 1000.0,
        voxels,
        contact: voxels > 0 || touching,
    })
}
