//! Procedural textures defined on the whole integer plane, so shifted
//! renders stay consistent without wrap-around.

/// Smooth value noise in `[0, 1]` on a square lattice.
#[derive(Debug, Clone, Copy)]
pub struct ValueNoise {
    seed: u64,
    cell: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ValueNoise {
    pub fn new(seed: u64, cell: f64) -> Self {
        assert!(cell > 0.0);
        ValueNoise { seed, cell }
    }

    fn lattice(&self, ix: i64, iy: i64) -> f64 {
        let h = splitmix(self.seed ^ splitmix((ix as u64).wrapping_mul(0x1f1f_1f1f) ^ splitmix(iy as u64)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let gx = x / self.cell;
        let gy = y / self.cell;
        let (x0, y0) = (gx.floor(), gy.floor());
        let fade = |t: f64| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (fade(gx - x0), fade(gy - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let a = self.lattice(ix, iy);
        let b = self.lattice(ix + 1, iy);
        let c = self.lattice(ix, iy + 1);
        let d = self.lattice(ix + 1, iy + 1);
        (a + (b - a) * tx) * (1.0 - ty) + (c + (d - c) * tx) * ty
    }
}
