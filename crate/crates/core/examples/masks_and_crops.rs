//! Mask algebra, IoU, PNG round trips and the crop used for the second
//! inference pass.

use amodal_kit::mask::{decode_mask_png, encode_mask_png, extract_mask_crop, iou, paste_crop, roi_crop_spec, BinaryMask, RgbaImage};

fn main() {
    let a = BinaryMask::from_rows(&["00111100", "00111100", "00111100", "00000000"]);
    let b = BinaryMask::from_rows(&["00000000", "00011110", "00011110", "00011110"]);
    println!("a ∪ b:\n{}", a.union(&b).unwrap().to_rows().join("\n"));
    println!("a \\ b:\n{}", a.difference(&b).unwrap().to_rows().join("\n"));
    println!("IoU {:.4}", iou(&a, &b).unwrap());

    let png = encode_mask_png(&a);
    assert_eq!(decode_mask_png(&png).unwrap(), a);
    println!("mask PNG: {} bytes, exact round trip", png.len());

    // a small object in a wide image gets a square crop with context around it
    let obj = BinaryMask::rect(200, 120, 150, 40, 170, 70);
    let spec = roi_crop_spec(&obj, 0.25, obj.dims(), 32).unwrap();
    println!("{spec:?}");
    let crop = extract_mask_crop(&obj, &spec).unwrap();
    println!("object fills {} of {} crop pixels", crop.area(), crop.len());
    let back = paste_crop(&RgbaImage::transparent(200, 120), &RgbaImage::from_fn(32, 32, |x, y| if crop.get(x, y) { [255, 0, 0, 255] } else { [0; 4] }), &spec).unwrap();
    println!("pasted back: IoU with the original {:.4}", iou(&back.alpha_mask(), &obj).unwrap());
}
