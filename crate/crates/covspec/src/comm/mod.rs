//! Communication layer: payload accounting, float16 quantization, channel
//! latency, and the wire codec.

pub mod channel;
pub mod codec;
pub mod f16;
pub mod payload;

pub use channel::{latency, ChannelConfig};
pub use codec::{decode_message, encode_message, Message, FRAME_OVERHEAD_BYTES};
pub use f16::{f16_decode, f16_encode, f16_roundtrip};
pub use payload::{
    downlink_bits, uplink_bits, uplink_bits_full_logits, DownlinkKind, PayloadConfig,
    PayloadLedger, RoundRecord,
};
