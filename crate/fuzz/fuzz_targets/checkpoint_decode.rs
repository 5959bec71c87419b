#![no_main]

//! Input layout: u16 LE manifest length, manifest bytes, blob bytes.
//! Manifests that parse as JSON get a second pass with the blob length and
//! digest fixed up, so tensor extents are reached past the checksum gate.

use libfuzzer_sys::fuzz_target;
use serde_json::Value;
use sha2::{Digest, Sha256};
use slidemil::train::{decode_checkpoint, encode_checkpoint};

fn check(manifest: &[u8], blob: &[u8]) {
    let Ok(record) = decode_checkpoint(manifest, blob) else { return };
    let (m, b) = encode_checkpoint(&record);
    let again = decode_checkpoint(&m, &b).expect("re-encoded checkpoint decodes");
    assert_eq!(encode_checkpoint(&again), (m, b));
}

fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let len = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    let (manifest, blob) = rest.split_at(len.min(rest.len()));
    check(manifest, blob);
    if let Ok(Value::Object(mut doc)) = serde_json::from_slice::<Value>(manifest) {
        doc.insert("blob_bytes".into(), blob.len().into());
        doc.insert("blob_sha256".into(), hex::encode(Sha256::digest(blob)).into());
        check(&serde_json::to_vec(&doc).expect("json serializes"), blob);
    }
});
