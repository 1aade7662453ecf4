//! Minimal HTTP endpoint for a viewer: the manifest, the files it lists and
//! pose uploads.

use std::path::Path;

use tiny_http::{Header, Method, Response, Server};

use silrig::skeleton::PoseFrame;
use silrig::{Error, Result};

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").unwrap()
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit('.').next() {
        Some("json" | "gltf") => "application/json",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

/// Validates a posted pose against the manifest's joint names.
fn accept_pose(dir: &Path, body: &str) -> std::result::Result<(), String> {
    let frame: PoseFrame = serde_json::from_str(body).map_err(|e| format!("invalid pose: {e}"))?;
    let manifest: serde_json::Value = std::fs::read_to_string(dir.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or_default();
    if let Some(joints) = manifest["joints"].as_array() {
        let known: Vec<&str> = joints.iter().filter_map(|j| j.as_str()).collect();
        if let Some(bad) = frame
            .rotations
            .keys()
            .find(|k| !known.contains(&k.as_str()))
        {
            return Err(format!("unknown joint {bad}"));
        }
    }
    for (name, q) in &frame.rotations {
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(format!("rotation of {name} is not a unit quaternion"));
        }
    }
    let text = serde_json::to_string_pretty(&frame).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("pose.json"), text).map_err(|e| e.to_string())
}

/// Serves until the process is stopped. Prints the bound address first.
pub fn serve(dir: &Path, host: &str, port: u16) -> Result<()> {
    if !dir.join("manifest.json").is_file() {
        return Err(Error::InvalidInput(format!(
            "{} has no manifest.json",
            dir.display()
        )));
    }
    let server = Server::http((host, port))
        .map_err(|e| Error::InvalidInput(format!("cannot bind {host}:{port}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .map(|a| a.to_string())
        .unwrap_or_default();
    println!("listening on http://{addr}");
    for mut req in server.incoming_requests() {
        let url = req.url().split('?').next().unwrap_or("").to_string();
        let method = req.method().clone();
        let res = match (&method, url.as_str()) {
            (Method::Post, "/pose") => {
                let mut body = String::new();
                match req
                    .as_reader()
                    .read_to_string(&mut body)
                    .map_err(|e| e.to_string())
                    .and_then(|_| accept_pose(dir, &body))
                {
                    Ok(()) => req
                        .respond(Response::from_string("{\"ok\":true}").with_header(json_header())),
                    Err(msg) => req.respond(
                        Response::from_string(serde_json::json!({ "error": msg }).to_string())
                            .with_header(json_header())
                            .with_status_code(400),
                    ),
                }
            }
            (Method::Get, path) => {
                let name = path.trim_start_matches('/');
                let file = dir.join(name);
                let safe = !name.is_empty() && !name.split('/').any(|c| c == ".." || c.is_empty());
                if safe && file.is_file() {
                    match std::fs::read(&file) {
                        Ok(bytes) => {
                            let h = Header::from_bytes("Content-Type", content_type(name)).unwrap();
                            req.respond(Response::from_data(bytes).with_header(h))
                        }
                        Err(_) => {
                            req.respond(Response::from_string("not found").with_status_code(404))
                        }
                    }
                } else {
                    req.respond(Response::from_string("not found").with_status_code(404))
                }
            }
            _ => req.respond(Response::from_string("not found").with_status_code(404)),
        };
        if let Err(e) = res {
            log::warn!("response failed: {e}");
        }
    }
    Ok(())
}
