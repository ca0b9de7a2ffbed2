//! Minimal local chat-completion server for exercising the LLM critic
//! without a network: counts requests and can answer with JSON, stall past
//! the client timeout, or drop connections mid-request.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Clone)]
enum Mode {
    /// Respond to every request with this assistant content.
    Json(String),
    /// Respond with a 502, a retryable transport-level failure.
    HttpError,
    /// Read the request, sleep past any sane client timeout, then respond.
    Stall(String),
    /// Valid content, except every n-th request gets prose instead.
    EveryNthGarbage { n: usize, content: String },
}

#[derive(Clone)]
pub struct MockBehavior {
    mode: Mode,
}

impl MockBehavior {
    pub fn always_json(content: &str) -> Self {
        Self {
            mode: Mode::Json(content.to_string()),
        }
    }

    pub fn http_error() -> Self {
        Self {
            mode: Mode::HttpError,
        }
    }

    pub fn stall(content: &str) -> Self {
        Self {
            mode: Mode::Stall(content.to_string()),
        }
    }

    pub fn every_nth_garbage(n: usize, content: &str) -> Self {
        Self {
            mode: Mode::EveryNthGarbage {
                n,
                content: content.to_string(),
            },
        }
    }
}

pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

/// Read one HTTP request (headers plus content-length body). Returns false
/// if the peer went away first.
fn read_request(stream: &mut TcpStream) -> bool {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return false,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
                if buf.len() > 1 << 20 {
                    return false;
                }
            }
            Err(_) => return false,
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = headers
        .lines()
        .find_map(|line| {
            let (name, value) = line.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body_read = buf.len() - header_end;
    while body_read < content_length {
        match stream.read(&mut chunk) {
            Ok(0) | Err(_) => return false,
            Ok(n) => body_read += n,
        }
    }
    true
}

fn respond_chat_json(stream: &mut TcpStream, content: &str) {
    let body = format!(
        r#"{{"choices":[{{"message":{{"role":"assistant","content":{}}}}}]}}"#,
        serde_json::to_string(content).expect("string serializes")
    );
    let response = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        body.len(),
        body
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

impl MockServer {
    pub fn start(behavior: MockBehavior) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind localhost");
        let addr = listener.local_addr().expect("local addr");
        listener.set_nonblocking(true).expect("nonblocking accept");
        let requests = Arc::new(AtomicUsize::new(0));
        let stop = Arc::new(AtomicBool::new(false));
        let thread_requests = Arc::clone(&requests);
        let thread_stop = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            while !thread_stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((mut stream, _)) => {
                        stream
                            .set_read_timeout(Some(Duration::from_secs(10)))
                            .ok();
                        if !read_request(&mut stream) {
                            continue;
                        }
                        let n = thread_requests.fetch_add(1, Ordering::SeqCst) + 1;
                        match &behavior.mode {
                            Mode::Json(content) => respond_chat_json(&mut stream, content),
                            Mode::HttpError => {
                                let _ = stream.write_all(
                                    b"HTTP/1.1 502 Bad Gateway\r\nContent-Length: 0\r\nConnection: close\r\n\r\n",
                                );
                                let _ = stream.flush();
                            }
                            Mode::Stall(content) => {
                                std::thread::sleep(Duration::from_millis(800));
                                respond_chat_json(&mut stream, content);
                            }
                            Mode::EveryNthGarbage { n: every, content } => {
                                if n % every == 0 {
                                    respond_chat_json(
                                        &mut stream,
                                        "the market looked lively; no numbers from me",
                                    );
                                } else {
                                    respond_chat_json(&mut stream, content);
                                }
                            }
                        }
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });
        Self {
            addr,
            requests,
            stop,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Poll until `n` requests have been parsed (the server thread may lag
    /// the client under load). Returns the final count.
    pub fn wait_for_requests(&self, n: usize, timeout: Duration) -> usize {
        let deadline = std::time::Instant::now() + timeout;
        while self.request_count() < n && std::time::Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
        }
        // Small settle window to catch over-counting too.
        std::thread::sleep(Duration::from_millis(50));
        self.request_count()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
