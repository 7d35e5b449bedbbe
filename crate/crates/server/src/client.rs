//! Blocking client for the length-prefixed TCP transport.

use std::io;
use std::net::{SocketAddr, TcpStream};
use std::time::{Duration, Instant};

use motion_studio_core::protocol::{
    read_frame, write_frame, ClientMessage, Envelope, ServerMessage,
};

pub struct TcpClient {
    stream: TcpStream,
    seq_no: u64,
}

impl TcpClient {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(TcpClient { stream, seq_no: 0 })
    }

    /// Sends a message with the next `seq_no`, which is returned.
    pub fn send(&mut self, message: ClientMessage) -> io::Result<u64> {
        self.seq_no += 1;
        let text = Envelope::new(self.seq_no, message).encode();
        write_frame(&mut self.stream, &text)?;
        Ok(self.seq_no)
    }

    /// Sends a raw frame, bypassing encoding.
    pub fn send_raw(&mut self, text: &str) -> io::Result<()> {
        write_frame(&mut self.stream, text)
    }

    /// Next frame, or a `TimedOut` error.
    pub fn recv(&mut self, timeout: Duration) -> io::Result<Envelope<ServerMessage>> {
        self.stream
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let text = read_frame(&mut self.stream)?
            .ok_or_else(|| io::Error::from(io::ErrorKind::UnexpectedEof))?;
        Envelope::decode(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Skips frames until one satisfies `pred`.
    pub fn recv_until(
        &mut self,
        timeout: Duration,
        mut pred: impl FnMut(&Envelope<ServerMessage>) -> bool,
    ) -> io::Result<Envelope<ServerMessage>> {
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(io::Error::from(io::ErrorKind::TimedOut));
            }
            let env = self.recv(left)?;
            if pred(&env) {
                return Ok(env);
            }
        }
    }

    /// Waits for the frame answering `seq_no`.
    pub fn reply_to(&mut self, seq_no: u64, timeout: Duration) -> io::Result<ServerMessage> {
        self.recv_until(timeout, |e| e.re == Some(seq_no))
            .map(|e| e.message)
    }

    /// Sends and waits for the direct answer.
    pub fn request(
        &mut self,
        message: ClientMessage,
        timeout: Duration,
    ) -> io::Result<ServerMessage> {
        let seq = self.send(message)?;
        self.reply_to(seq, timeout)
    }
}
