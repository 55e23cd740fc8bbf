use anyhow::Result;
use stilltrack::{EventWindow, LabeledBox, PixelRect};

pub const BACKGROUND: [u8; 3] = [24, 24, 24];
pub const POSITIVE: [u8; 3] = [255, 190, 0];
pub const NEGATIVE: [u8; 3] = [0, 140, 255];
pub const STILL: [u8; 3] = [255, 0, 0];
/// Class colours, cycled by class id. None of them is pure red.
pub const PALETTE: [[u8; 3]; 6] = [
    [0, 220, 90],
    [230, 0, 230],
    [255, 255, 255],
    [0, 230, 230],
    [160, 110, 255],
    [200, 200, 0],
];

pub struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            rgb.extend_from_slice(&BACKGROUND);
        }
        Self { width, height, rgb }
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.rgb[i..i + 3].copy_from_slice(&c);
    }

    /// Later events overwrite earlier ones at the same pixel.
    pub fn draw_events(&mut self, window: &EventWindow<'_>) {
        for e in window.events {
            let c = if e.p == 1 { POSITIVE } else { NEGATIVE };
            self.put(e.x as i64, e.y as i64, c);
        }
    }

    /// One-pixel outline; parts outside the frame are not drawn.
    pub fn draw_box(&mut self, b: &LabeledBox) {
        let r = PixelRect::from_box(b);
        if r.is_empty() {
            return;
        }
        let c = if b.visibility == Some(0.0) {
            STILL
        } else {
            PALETTE[b.class_id as usize % PALETTE.len()]
        };
        // Skip straight to the visible span so huge boxes stay cheap.
        let (xa, xb) = (r.x0.max(0), r.x1.min(self.width as i64));
        let (ya, yb) = (r.y0.max(0), r.y1.min(self.height as i64));
        for x in xa..xb {
            self.put(x, r.y0, c);
            self.put(x, r.y1 - 1, c);
        }
        for y in ya..yb {
            self.put(r.x0, y, c);
            self.put(r.x1 - 1, y, c);
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(&self.rgb)?;
            writer.finish()?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn off_frame_box_is_clipped() {
        let mut c = Canvas::new(8, 6);
        c.draw_box(&LabeledBox::new(-3.0, 2.0, 6.0, 10.0, 0, 1).with_visibility(0.0));
        // left edge at x=-3 is outside; right edge x=2 visible from y=2 down
        assert_eq!(&c.rgb[(2 * 8 + 2) * 3..(2 * 8 + 2) * 3 + 3], &STILL);
        assert_eq!(&c.rgb[(5 * 8 + 2) * 3..(5 * 8 + 2) * 3 + 3], &STILL);
        assert_eq!(&c.rgb[(3 * 8 + 1) * 3..(3 * 8 + 1) * 3 + 3], &BACKGROUND);
        c.draw_box(&LabeledBox::new(100.0, 100.0, 5.0, 5.0, 0, 1));
        assert!(c.to_png().is_ok());
    }

    #[test]
    fn blank_frame_is_background() {
        let c = Canvas::new(3, 2);
        assert!(c.rgb.chunks(3).all(|p| p == BACKGROUND));
    }
}
