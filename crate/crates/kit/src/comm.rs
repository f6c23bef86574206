//! Threaded communication entities over framed byte streams.
//!
//! A [`Server`] runs one listener thread, one reader thread per connection
//! and a pool of workers that invoke the [`Callback`]. Callbacks for one
//! connection never run concurrently and arrive in stream order; different
//! connections may be served in parallel. [`Client`] and
//! [`serial_connection`] run a single connection on one thread. Sending is
//! the only caller-initiated operation.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use leads_kit_core::framing::{self, Framer};
use leads_kit_core::error::FramingError;

#[derive(Debug, thiserror::Error)]
pub enum CommError {
    #[error("transport error: {0}")]
    Io(#[from] io::Error),
    #[error("framing error: {0}")]
    Framing(#[from] FramingError),
    #[error("connection closed")]
    Closed,
    #[error("no connection with id {0}")]
    UnknownConnection(u64),
    #[error("pool size must be at least 1")]
    EmptyPool,
}

/// Event sink for an entity. All methods default to doing nothing.
pub trait Callback: Send + Sync + 'static {
    fn on_connect(&self, _conn: &Connection) {}
    fn on_receive(&self, _conn: &Connection, _message: &[u8]) {}
    fn on_disconnect(&self, _conn: &Connection) {}
}

type Closer = Box<dyn Fn() + Send + Sync>;

struct ConnInner {
    id: u64,
    peer: String,
    separator: u8,
    writer: Mutex<Option<Box<dyn Write + Send>>>,
    closer: Option<Closer>,
    closed: AtomicBool,
}

/// Cheap, clonable handle to one live connection.
#[derive(Clone)]
pub struct Connection(Arc<ConnInner>);

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("id", &self.0.id)
            .field("peer", &self.0.peer)
            .finish()
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

impl Connection {
    fn new(
        peer: String,
        separator: u8,
        writer: Box<dyn Write + Send>,
        closer: Option<Closer>,
    ) -> Self {
        Self(Arc::new(ConnInner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            peer,
            separator,
            writer: Mutex::new(Some(writer)),
            closer,
            closed: AtomicBool::new(false),
        }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn peer(&self) -> &str {
        &self.0.peer
    }

    pub fn separator(&self) -> u8 {
        self.0.separator
    }

    pub fn is_closed(&self) -> bool {
        self.0.closed.load(Ordering::Acquire)
    }

    /// Frames and writes one message. Safe to call from any thread.
    pub fn send(&self, message: &[u8]) -> Result<(), CommError> {
        let bytes = framing::encode(self.0.separator, message)?;
        let mut guard = self.0.writer.lock().expect("writer lock poisoned");
        let w = guard.as_mut().ok_or(CommError::Closed)?;
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    /// Closes the write side and asks the transport to stop reading. The
    /// reader then reports `on_disconnect`.
    pub fn close(&self) {
        if let Some(mut w) = self.0.writer.lock().expect("writer lock poisoned").take() {
            let _ = w.flush();
        }
        if self.0.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        if let Some(c) = &self.0.closer {
            c();
        }
    }
}

enum Event {
    Connect,
    Receive(Vec<u8>),
    Disconnect,
}

/// Reads until EOF or error, handing every complete message to `emit`.
fn read_loop(mut reader: impl Read, separator: u8, mut emit: impl FnMut(Event)) {
    let mut framer = Framer::new(separator);
    let mut buf = [0u8; 4096];
    loop {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                for m in framer.feed(&buf[..n]) {
                    emit(Event::Receive(m));
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    emit(Event::Disconnect);
}

fn deliver(cb: &dyn Callback, conn: &Connection, event: Event) {
    match event {
        Event::Connect => cb.on_connect(conn),
        Event::Receive(m) => cb.on_receive(conn, &m),
        Event::Disconnect => {
            conn.close();
            cb.on_disconnect(conn)
        }
    }
}

// ---- server ----

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    pub separator: u8,
    pub pool_size: usize,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 0,
            separator: framing::DEFAULT_SEPARATOR,
            pool_size: 4,
        }
    }
}

/// Per-connection event queue. `scheduled` is true while a worker owns it.
struct Mailbox {
    conn: Connection,
    state: Mutex<(VecDeque<Event>, bool)>,
}

impl Mailbox {
    fn push(self: &Arc<Self>, event: Event, jobs: &Sender<Arc<Mailbox>>) {
        let mut st = self.state.lock().expect("mailbox lock poisoned");
        st.0.push_back(event);
        if !st.1 {
            st.1 = true;
            drop(st);
            let _ = jobs.send(Arc::clone(self));
        }
    }

    fn drain(&self, cb: &dyn Callback) {
        loop {
            let event = {
                let mut st = self.state.lock().expect("mailbox lock poisoned");
                match st.0.pop_front() {
                    Some(e) => e,
                    None => {
                        st.1 = false;
                        return;
                    }
                }
            };
            deliver(cb, &self.conn, event);
        }
    }
}

struct Shared {
    conns: Mutex<BTreeMap<u64, Connection>>,
    readers: Mutex<Vec<JoinHandle<()>>>,
    stop: AtomicBool,
}

pub struct Server {
    addr: SocketAddr,
    separator: u8,
    shared: Arc<Shared>,
    listener: Option<JoinHandle<()>>,
    workers: Vec<JoinHandle<()>>,
    jobs: Option<Sender<Arc<Mailbox>>>,
}

impl Server {
    pub fn bind(options: &ServerOptions, callback: Arc<dyn Callback>) -> Result<Self, CommError> {
        if options.pool_size == 0 {
            return Err(CommError::EmptyPool);
        }
        let listener = TcpListener::bind((options.host.as_str(), options.port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (jobs, queue): (Sender<Arc<Mailbox>>, Receiver<Arc<Mailbox>>) =
            crossbeam_channel::unbounded();
        let workers = (0..options.pool_size)
            .map(|i| {
                let queue = queue.clone();
                let cb = Arc::clone(&callback);
                thread::Builder::new()
                    .name(format!("comm-worker-{i}"))
                    .spawn(move || {
                        for mailbox in queue {
                            mailbox.drain(cb.as_ref());
                        }
                    })
                    .expect("spawn worker")
            })
            .collect();
        let shared = Arc::new(Shared {
            conns: Mutex::new(BTreeMap::new()),
            readers: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let separator = options.separator;
        let listener = {
            let shared = Arc::clone(&shared);
            let jobs = jobs.clone();
            thread::Builder::new()
                .name("comm-listener".into())
                .spawn(move || listen(listener, separator, &shared, &jobs))
                .expect("spawn listener")
        };
        Ok(Self {
            addr,
            separator,
            shared,
            listener: Some(listener),
            workers,
            jobs: Some(jobs),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn connections(&self) -> Vec<Connection> {
        self.shared
            .conns
            .lock()
            .expect("connection map poisoned")
            .values()
            .cloned()
            .collect()
    }

    /// Sends to every live connection and returns how many accepted it.
    pub fn broadcast(&self, message: &[u8]) -> Result<usize, CommError> {
        framing::encode(self.separator, message)?;
        let mut sent = 0;
        for c in self.connections() {
            match c.send(message) {
                Ok(()) => sent += 1,
                Err(CommError::Framing(e)) => return Err(e.into()),
                Err(_) => {}
            }
        }
        Ok(sent)
    }

    pub fn send_to(&self, id: u64, message: &[u8]) -> Result<(), CommError> {
        let conn = self
            .shared
            .conns
            .lock()
            .expect("connection map poisoned")
            .get(&id)
            .cloned()
            .ok_or(CommError::UnknownConnection(id))?;
        conn.send(message)
    }

    /// Stops accepting, closes every connection and waits until every
    /// pending callback, including each `on_disconnect`, has run.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(l) = self.listener.take() {
            let _ = l.join();
        }
        for c in self.connections() {
            c.close();
        }
        let readers = std::mem::take(&mut *self.shared.readers.lock().expect("reader list poisoned"));
        for r in readers {
            let _ = r.join();
        }
        self.jobs = None;
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.listener.is_some() || !self.workers.is_empty() {
            self.stop();
        }
    }
}

fn listen(listener: TcpListener, separator: u8, shared: &Arc<Shared>, jobs: &Sender<Arc<Mailbox>>) {
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Err(e) = accept(stream, peer, separator, shared, jobs) {
                    eprintln!("comm: dropping connection from {peer}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => {
                eprintln!("comm: accept failed: {e}");
                thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

fn accept(
    stream: TcpStream,
    peer: SocketAddr,
    separator: u8,
    shared: &Arc<Shared>,
    jobs: &Sender<Arc<Mailbox>>,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    let closer_handle = stream.try_clone()?;
    let conn = Connection::new(
        peer.to_string(),
        separator,
        Box::new(stream),
        Some(Box::new(move || {
            let _ = closer_handle.shutdown(Shutdown::Both);
        })),
    );
    let mailbox = Arc::new(Mailbox {
        conn: conn.clone(),
        state: Mutex::new((VecDeque::new(), false)),
    });
    shared
        .conns
        .lock()
        .expect("connection map poisoned")
        .insert(conn.id(), conn.clone());
    mailbox.push(Event::Connect, jobs);
    let thread_shared = Arc::clone(shared);
    let jobs = jobs.clone();
    let handle = thread::Builder::new()
        .name(format!("comm-reader-{}", conn.id()))
        .spawn(move || {
            read_loop(reader, separator, |e| {
                if matches!(e, Event::Disconnect) {
                    thread_shared
                        .conns
                        .lock()
                        .expect("connection map poisoned")
                        .remove(&mailbox.conn.id());
                }
                mailbox.push(e, &jobs);
            });
        })?;
    shared.readers.lock().expect("reader list poisoned").push(handle);
    Ok(())
}

// ---- single-connection endpoints ----

/// One connection served by a dedicated thread: a TCP client or a serial
/// link.
pub struct Endpoint {
    conn: Connection,
    thread: Option<JoinHandle<()>>,
}

pub type Client = Endpoint;

impl Endpoint {
    fn spawn(
        conn: Connection,
        reader: impl Read + Send + 'static,
        callback: Arc<dyn Callback>,
    ) -> Self {
        let c = conn.clone();
        let thread = thread::Builder::new()
            .name(format!("comm-conn-{}", conn.id()))
            .spawn(move || {
                deliver(callback.as_ref(), &c, Event::Connect);
                let sep = c.separator();
                read_loop(reader, sep, |e| deliver(callback.as_ref(), &c, e));
            })
            .expect("spawn connection thread");
        Self {
            conn,
            thread: Some(thread),
        }
    }

    /// Connects over TCP; `on_connect` fires on the connection thread.
    pub fn connect(
        addr: impl ToSocketAddrs,
        separator: u8,
        callback: Arc<dyn Callback>,
    ) -> Result<Self, CommError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr()?.to_string();
        let reader = stream.try_clone()?;
        let closer = stream.try_clone()?;
        let conn = Connection::new(
            peer,
            separator,
            Box::new(stream),
            Some(Box::new(move || {
                let _ = closer.shutdown(Shutdown::Both);
            })),
        );
        Ok(Self::spawn(conn, reader, callback))
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    pub fn send(&self, message: &[u8]) -> Result<(), CommError> {
        self.conn.send(message)
    }

    pub fn close(&self) {
        self.conn.close();
    }

    /// Waits for the connection thread, i.e. until `on_disconnect` ran.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().is_none_or(JoinHandle::is_finished)
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.conn.close();
        // a serial reader only stops once the far side hangs up
        if self.conn.0.closer.is_some() {
            if let Some(t) = self.thread.take() {
                let _ = t.join();
            }
        }
    }
}

/// Runs the connection protocol over an arbitrary byte stream pair, such as
/// a serial port or [`pipe`]. `close` only drops the writer; the link ends
/// when the far side stops writing.
pub fn serial_connection(
    reader: impl Read + Send + 'static,
    writer: impl Write + Send + 'static,
    separator: u8,
    callback: Arc<dyn Callback>,
) -> Endpoint {
    let conn = Connection::new("serial".into(), separator, Box::new(writer), None);
    Endpoint::spawn(conn, reader, callback)
}

// ---- in-memory byte pipe ----

pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
}

pub struct PipeWriter {
    tx: Sender<Vec<u8>>,
}

impl Read for PipeReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.offset == self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "pipe closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// One unidirectional byte pipe. Dropping the writer gives the reader EOF.
pub fn byte_pipe() -> (PipeWriter, PipeReader) {
    let (tx, rx) = crossbeam_channel::unbounded();
    (
        PipeWriter { tx },
        PipeReader {
            rx,
            pending: Vec::new(),
            offset: 0,
        },
    )
}

/// Both ends of a full-duplex in-memory link, each as `(reader, writer)`.
pub fn pipe() -> ((PipeReader, PipeWriter), (PipeReader, PipeWriter)) {
    let (a_tx, b_rx) = byte_pipe();
    let (b_tx, a_rx) = byte_pipe();
    ((a_rx, a_tx), (b_rx, b_tx))
}
