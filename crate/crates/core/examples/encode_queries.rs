//! Encodes a few queries as k-hot vectors and decodes them back.

use qmd::encoding::{decode_query, detection_query, encode_location, encode_query};
use qmd::grid::{XSlice, YSlice};
use qmd::querysynth::Query;

fn main() -> qmd::Result<()> {
    let num_classes = 6;

    println!("top/right      {:?}", encode_location(YSlice::Top, XSlice::Right));
    println!("all/far-right  {:?}", encode_location(YSlice::All, XSlice::FarRight));
    println!("all/all        {:?}", encode_location(YSlice::All, XSlice::All));

    let queries = [
        Query::single(2),
        Query::new([0, 3], None),
        Query::new([1], Some((YSlice::Bottom, XSlice::Left))),
    ];
    for q in &queries {
        let enc = encode_query(q, num_classes)?;
        let back = decode_query(enc.bits(), num_classes)?;
        assert_eq!(&back, q);
        println!("{:?} -> {:?}", q.labels, enc.bits());
    }
    // the reserved all-ones query asks for standard detection
    println!("detection      {:?}", detection_query(num_classes).bits());
    Ok(())
}
