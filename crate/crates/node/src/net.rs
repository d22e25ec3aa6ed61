//! TCP transport: one frame per message, `u32 BE length ‖ bytes`.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use psfe_core::dataset::PlainDataset;
use psfe_core::wire::frame::{check_len, MAX_FRAME_LEN};
use psfe_core::wire::{FunctionDescriptor, QueryId};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::Mutex;
use tokio::task::JoinHandle;

use crate::analyst::{AnalystSession, Progress, QueryOutcome};
use crate::csp::CspService;
use crate::curator::{CuratorSession, SetupReport};
use crate::error::{ClientError, ServiceError};
use crate::ma::{MaService, MaStep};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Reads one frame; `None` on a clean end of stream.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).await?;
    Ok(Some(buf))
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, message: &[u8]) -> io::Result<()> {
    let len = check_len(message.len())?;
    w.write_all(&len.to_be_bytes()).await?;
    w.write_all(message).await?;
    w.flush().await
}

/// Sends one frame and waits for one frame back.
pub async fn exchange(stream: &mut TcpStream, message: &[u8], timeout: Duration) -> Result<Vec<u8>, ClientError> {
    write_frame(stream, message).await?;
    match tokio::time::timeout(timeout, read_frame(stream)).await {
        Err(_) => Err(ClientError::Timeout("reply")),
        Ok(Ok(Some(reply))) => Ok(reply),
        Ok(Ok(None)) => Err(io::Error::new(io::ErrorKind::UnexpectedEof, "peer closed the connection").into()),
        Ok(Err(e)) => Err(e.into()),
    }
}

/// Connects, sends one frame and returns the reply.
pub async fn request<A: ToSocketAddrs>(addr: A, message: &[u8], timeout: Duration) -> Result<Vec<u8>, ClientError> {
    let mut stream = tokio::time::timeout(timeout, TcpStream::connect(addr))
        .await
        .map_err(|_| ClientError::Timeout("connection"))??;
    stream.set_nodelay(true)?;
    exchange(&mut stream, message, timeout).await
}

async fn serve<F, Fut>(listener: TcpListener, handle: F)
where
    F: Fn(TcpStream) -> Fut + Send + Sync + 'static,
    Fut: std::future::Future<Output = io::Result<()>> + Send + 'static,
{
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(conn) => conn,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        let task = handle(stream);
        tokio::spawn(async move {
            if let Err(e) = task.await {
                tracing::debug!(%peer, "connection closed: {e}");
            }
        });
    }
}

/// Serves the CSP until the task is dropped.
pub async fn serve_csp(listener: TcpListener, csp: Arc<CspService>) {
    serve(listener, move |mut stream| {
        let csp = csp.clone();
        async move {
            while let Some(frame) = read_frame(&mut stream).await? {
                let reply = csp.respond(&frame);
                write_frame(&mut stream, &reply).await?;
            }
            Ok(())
        }
    })
    .await
}

/// The MA plus its persistent link to the CSP.
#[derive(Debug)]
pub struct MaNode {
    service: Arc<MaService>,
    csp_addr: String,
    link: Mutex<Option<TcpStream>>,
    timeout: Duration,
}

impl MaNode {
    pub fn new(service: Arc<MaService>, csp_addr: impl Into<String>, timeout: Duration) -> Self {
        Self { service, csp_addr: csp_addr.into(), link: Mutex::new(None), timeout }
    }

    pub fn service(&self) -> &Arc<MaService> {
        &self.service
    }

    async fn forward(&self, m6: &[u8]) -> Result<Vec<u8>, ServiceError> {
        let mut link = self.link.lock().await;
        // A cached connection may have been closed by the peer; retry once
        // on a fresh one.
        for attempt in 0..2 {
            if link.is_none() {
                let stream = tokio::time::timeout(self.timeout, TcpStream::connect(&self.csp_addr))
                    .await
                    .map_err(|_| ServiceError::Unavailable("connecting to the CSP timed out".into()))?
                    .map_err(|e| ServiceError::Unavailable(format!("CSP at {}: {e}", self.csp_addr)))?;
                stream.set_nodelay(true)?;
                *link = Some(stream);
            }
            let stream = link.as_mut().expect("connected above");
            match exchange(stream, m6, self.timeout).await {
                Ok(reply) => return Ok(reply),
                Err(ClientError::Transport(e)) if attempt == 0 => {
                    tracing::debug!("CSP link dropped, reconnecting: {e}");
                    *link = None;
                }
                Err(e) => {
                    *link = None;
                    return Err(ServiceError::Unavailable(e.to_string()));
                }
            }
        }
        unreachable!("second attempt returns")
    }

    /// Handles one frame from the curator or an analyst.
    pub async fn respond(&self, frame: &[u8]) -> Vec<u8> {
        match self.service.respond(frame) {
            MaStep::Reply(reply) => reply,
            MaStep::Forward { query, m6 } => {
                let reply = self.forward(&m6).await;
                self.service.relay(query, reply)
            }
        }
    }
}

pub async fn serve_ma(listener: TcpListener, node: Arc<MaNode>) {
    serve(listener, move |mut stream| {
        let node = node.clone();
        async move {
            while let Some(frame) = read_frame(&mut stream).await? {
                let reply = node.respond(&frame).await;
                write_frame(&mut stream, &reply).await?;
            }
            Ok(())
        }
    })
    .await
}

/// Binds `addr` and serves the CSP in a background task.
pub async fn spawn_csp(csp: Arc<CspService>, addr: &str) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve_csp(listener, csp))))
}

pub async fn spawn_ma(node: Arc<MaNode>, addr: &str) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve_ma(listener, node))))
}

/// Runs setup against both services. A failure on one side does not stop
/// the other; the report says which acknowledgements verified.
pub async fn run_setup(
    curator: &CuratorSession,
    ds: &PlainDataset,
    csp_addr: &str,
    ma_addr: &str,
    timeout: Duration,
) -> Result<SetupReport, ClientError> {
    let bundle = curator.prepare(ds, &mut rand::rngs::OsRng)?;
    let csp = match request(csp_addr, &bundle.m1, timeout).await {
        Ok(reply) => curator.check_csp_ack(&bundle, &reply),
        Err(e) => Err(e),
    };
    let ma = match request(ma_addr, &bundle.m2, timeout).await {
        Ok(reply) => curator.check_ma_ack(&bundle, &reply),
        Err(e) => Err(e),
    };
    Ok(SetupReport::new(csp, ma))
}

/// One read: M5 to the MA, then a fetch of the result list from the CSP.
pub async fn run_query(
    session: &AnalystSession,
    value: &str,
    variable: &str,
    function: FunctionDescriptor,
    ma_addr: &str,
    csp_addr: &str,
    timeout: Duration,
) -> Result<QueryOutcome, ClientError> {
    let (token, m5) = session.token(value, variable, function)?;
    let reply = request(ma_addr, &m5, timeout).await?;
    let query = match session.accept_ma_reply(&token, &reply)? {
        Progress::Done(outcome) => return Ok(outcome),
        Progress::Waiting(query) => query,
    };
    let result = fetch_result(session, query, csp_addr, timeout).await;
    if result.is_err() {
        session.abandon(query);
    }
    result
}

async fn fetch_result(
    session: &AnalystSession,
    query: QueryId,
    csp_addr: &str,
    timeout: Duration,
) -> Result<QueryOutcome, ClientError> {
    let reply = request(csp_addr, &session.fetch(query)?, timeout).await?;
    match session.accept_csp_reply(&reply)? {
        Progress::Done(outcome) => Ok(outcome),
        Progress::Waiting(_) => Err(ClientError::ProtocolState("result leg did not complete".into())),
    }
}
