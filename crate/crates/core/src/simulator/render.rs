//! Synthetic scene frames.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame;
use crate::scene::{band_rows, SceneClass, SceneTag};

const JPEG_QUALITY: u8 = 80;

/// Renders a scene of `class` as JPEG (no tag comment). The top rows carry
/// the class color band; `noise` scrambles everything below it.
pub fn render_frame(class: SceneClass, width: u32, height: u32, noise: bool, seed: u64) -> Vec<u8> {
    let band = band_rows(height);
    let horizon = height * 2 / 5;
    let band_color = Rgb(class.band_color());
    let mut img = RgbImage::from_fn(width, height, |x, y| {
        if y < band {
            return band_color;
        }
        let (fx, fy) = (x as f32 / width as f32, y as f32 / height as f32);
        match class {
            // Sky over grey asphalt with lane marks.
            SceneClass::Normal => {
                if y < horizon {
                    Rgb([140, 170, (200.0 + 40.0 * fy) as u8])
                } else if ((fx * 8.0) as u32).is_multiple_of(2) && (fx - 0.5).abs() < 0.01 {
                    Rgb([230, 230, 230])
                } else {
                    Rgb([90, 90, 95])
                }
            }
            // Overcast sky, muddy water from the horizon down.
            SceneClass::Flood => {
                if y < horizon {
                    Rgb([110, 115, 120])
                } else {
                    let ripple = ((fy * 60.0 + fx * 7.0).sin() * 12.0) as i32;
                    Rgb([(120 + ripple) as u8, (100 + ripple) as u8, 60])
                }
            }
            // Signal-lost test card.
            SceneClass::Unknown => {
                let bar = (fx * 7.0) as u8;
                Rgb([bar * 30, 40, 255 - bar * 30])
            }
        }
    });
    if noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for y in band..height {
            for x in 0..width {
                let p = img.get_pixel_mut(x, y);
                for c in p.0.iter_mut() {
                    *c = c.saturating_add_signed(rng.gen_range(-96i16..=96) as i8);
                }
            }
        }
    }
    frame::encode_jpeg(&img, JPEG_QUALITY)
}

/// Adds the lossless tag comment to a rendered frame.
pub fn tag_frame(base: &[u8], tag: &SceneTag) -> Vec<u8> {
    frame::with_comment(base, tag.encode().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_decodable_tagged_frames() {
        for class in SceneClass::ALL {
            let base = render_frame(class, 320, 240, false, 1);
            let tag = SceneTag {
                class,
                tvid: "T-1".into(),
                sequence: 3,
            };
            let bytes = tag_frame(&base, &tag);
            let img = frame::decode(&bytes).unwrap();
            assert_eq!((img.width(), img.height()), (320, 240));
            let found: Vec<_> = frame::comments(&bytes)
                .iter()
                .filter_map(|c| SceneTag::decode(std::str::from_utf8(c).ok()?))
                .collect();
            assert_eq!(found, vec![tag]);
        }
    }

    #[test]
    fn noise_is_deterministic_and_keeps_band() {
        let a = render_frame(SceneClass::Flood, 160, 120, true, 9);
        assert_eq!(a, render_frame(SceneClass::Flood, 160, 120, true, 9));
        assert_ne!(a, render_frame(SceneClass::Flood, 160, 120, false, 9));
        let img = frame::decode(&a).unwrap().to_rgb8();
        let px = img.get_pixel(80, 3).0;
        assert!(px[2] > 200 && px[0] < 60, "band pixel {px:?}");
    }
}
