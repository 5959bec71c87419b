#![no_main]

use libfuzzer_sys::fuzz_target;
use slidemil::store::RoutingIndex;

fuzz_target!(|data: &[u8]| {
    let Ok(index) = RoutingIndex::from_json_bytes(data) else { return };
    let bytes = serde_json::to_vec(&index).expect("index serializes");
    let again = RoutingIndex::from_json_bytes(&bytes).expect("serialized index parses");
    assert_eq!(again, index);
});
