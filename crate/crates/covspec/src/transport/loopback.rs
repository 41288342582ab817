//! In-process loopback fabric. Messages still pass through the wire
//! codec byte-for-byte; delivery order is FIFO per direction.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::rc::Rc;

use super::{Endpoint, Role};
use crate::comm::codec::{decode_message, encode_message, Message};
use crate::error::{CovError, Result};

#[derive(Debug, Default)]
struct Shared {
    to_edge: VecDeque<Vec<u8>>,
    to_device: VecDeque<Vec<u8>>,
    closed: bool,
}

/// One side of an in-process session.
#[derive(Debug)]
pub struct LoopbackEndpoint {
    role: Role,
    shared: Rc<RefCell<Shared>>,
}

/// Creates a connected (device, edge) endpoint pair.
pub fn loopback_pair() -> (LoopbackEndpoint, LoopbackEndpoint) {
    let shared = Rc::new(RefCell::new(Shared::default()));
    (
        LoopbackEndpoint {
            role: Role::Device,
            shared: Rc::clone(&shared),
        },
        LoopbackEndpoint {
            role: Role::Edge,
            shared,
        },
    )
}

impl LoopbackEndpoint {
    pub fn close(&mut self) {
        self.shared.borrow_mut().closed = true;
    }

    fn take(&mut self) -> Result<Option<Message>> {
        let mut shared = self.shared.borrow_mut();
        let inbox = match self.role {
            Role::Device => &mut shared.to_device,
            Role::Edge => &mut shared.to_edge,
        };
        match inbox.pop_front() {
            Some(bytes) => {
                let (msg, used) = decode_message(&bytes)?;
                if used != bytes.len() {
                    return Err(CovError::FrameError("trailing bytes in frame".into()));
                }
                Ok(Some(msg))
            }
            None => {
                if shared.closed {
                    Err(CovError::SessionClosed)
                } else {
                    Ok(None)
                }
            }
        }
    }
}

impl Endpoint for LoopbackEndpoint {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let mut shared = self.shared.borrow_mut();
        if shared.closed {
            return Err(CovError::SessionClosed);
        }
        let bytes = encode_message(msg);
        match self.role {
            Role::Device => shared.to_edge.push_back(bytes),
            Role::Edge => shared.to_device.push_back(bytes),
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        // Single-threaded loopback: the peer must already have replied; an
        // empty inbox means the scheduler misdrove the roles.
        match self.take()? {
            Some(msg) => Ok(msg),
            None => Err(CovError::TransportTimeout),
        }
    }

    fn poll(&mut self) -> Result<Option<Message>> {
        match self.take() {
            Err(CovError::SessionClosed) => Ok(None),
            other => other,
        }
    }
}
