/**
 * Browser wiring: connects the state machine in console.ts to the DOM.
 * All protocol and geometry logic lives in wire.ts / console.ts /
 * pcd.ts / viewer.ts; this file only moves bytes and pixels.
 */

import {
  ConsoleState,
  ControlCoalescer,
  ReplayTransport,
  metricsForFrame,
  parseMetricsJsonl,
  planeDepthValid,
  tileKey,
} from "./console.js";
import { parsePcd, PointCloud } from "./pcd.js";
import { decode, encode, MessageType, replaySeek, setPlaneDepth } from "./wire.js";
import { defaultOrbit, projectCloud, rotateOrbit, zoomOrbit, OrbitState } from "./viewer.js";

const qs = <T extends HTMLElement>(selector: string) =>
  document.querySelector(selector) as T;

const state = new ConsoleState();
let socket: WebSocket | null = null;
let sessionId = "";
let transport: ReplayTransport | null = null;
let metricsRows = parseMetricsJsonl("");
let cloud: PointCloud | null = null;
let orbit: OrbitState = defaultOrbit();

const coalescer = new ControlCoalescer((header) => {
  socket?.send(encode(MessageType.CONTROL, header));
});

function statusLine(text: string) {
  qs<HTMLSpanElement>("#status").textContent = text;
}

function connect() {
  sessionId = qs<HTMLInputElement>("#session-id").value.trim();
  if (!sessionId) return;
  socket?.close();
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  socket = new WebSocket(`${scheme}://${location.host}/stream/${sessionId}`);
  socket.binaryType = "arraybuffer";
  state.status = "connecting";
  statusLine(`connecting to ${sessionId}...`);

  socket.onopen = () => {
    state.onSocketOpen();
    statusLine(`live: ${sessionId}`);
    void refreshSessionInfo();
  };
  socket.onmessage = (event) => {
    const envelope = decode(new Uint8Array(event.data as ArrayBuffer));
    const tile = state.onEnvelope(envelope);
    if (tile) renderTile(tile.modelId, tile.task);
    renderControls();
  };
  socket.onclose = () => {
    state.onSocketClosed();
    if (state.status === "retrying") {
      statusLine(`disconnected, retry #${state.retries}...`);
      setTimeout(connect, 1000);
    }
  };
}

async function refreshSessionInfo() {
  const resp = await fetch(`/sessions/${sessionId}`);
  if (!resp.ok) return;
  const info = (await resp.json()) as { frame_count: number };
  transport = new ReplayTransport(info.frame_count, (index) => {
    socket?.send(encode(MessageType.CONTROL, replaySeek(sessionId, index)));
  });
  const seekBar = qs<HTMLInputElement>("#seek");
  seekBar.max = String(Math.max(info.frame_count - 1, 0));
}

function renderTile(modelId: string, task: string) {
  const tile = state.tiles.get(tileKey(modelId, task));
  if (!tile) return;
  const grid = qs<HTMLDivElement>("#tiles");
  const id = `tile-${modelId}-${task}`.replace(/[^a-zA-Z0-9-]/g, "_");
  let cell = document.getElementById(id);
  if (!cell) {
    cell = document.createElement("div");
    cell.id = id;
    cell.className = "tile";
    cell.innerHTML = `<header></header><img alt="${modelId}/${task}"><footer></footer>`;
    grid.appendChild(cell);
  }
  const headerEl = cell.querySelector("header") as HTMLElement;
  headerEl.textContent = `${modelId} / ${task} @ frame ${tile.frameIndex ?? "-"}`;
  const badge = tile.error ? ` [${tile.error}]` : "";
  (cell.querySelector("footer") as HTMLElement).textContent = badge;
  if (!tile.error && tile.payload && task !== "point_cloud") {
    const img = cell.querySelector("img") as HTMLImageElement;
    const blob = new Blob([tile.payload.slice().buffer], { type: "image/png" });
    const url = URL.createObjectURL(blob);
    img.onload = () => URL.revokeObjectURL(url);
    img.src = url;
  }
  if (task === "point_cloud" && tile.payload && !tile.error) {
    cloud = parsePcd(tile.payload);
    drawCloud();
  }
  renderMetricsTable(tile.frameIndex ?? 0);
}

function renderControls() {
  const acked = state.displayedPlaneDepth();
  qs<HTMLSpanElement>("#plane-acked").textContent =
    acked === null ? "(not acknowledged)" : `${acked.toFixed(2)} m`;
}

function renderMetricsTable(frameIndex: number) {
  const rows = metricsForFrame(metricsRows, frameIndex);
  const tbody = qs<HTMLTableSectionElement>("#metrics tbody");
  tbody.innerHTML = "";
  for (const row of rows) {
    const tr = document.createElement("tr");
    tr.innerHTML = `<td>${row.model_id}</td><td>${row.metric_id}</td><td>${row.value.toPrecision(6)}</td>`;
    tbody.appendChild(tr);
  }
}

async function loadMetrics() {
  const resp = await fetch(`/sessions/${sessionId}/metrics`);
  if (resp.ok) {
    metricsRows = parseMetricsJsonl(await resp.text());
    renderMetricsTable(state.frameIndexShown() ?? 0);
  }
}

async function loadCloud(frameIndex: number) {
  const resp = await fetch(`/sessions/${sessionId}/pointcloud/${frameIndex}?stride=2`);
  if (resp.ok) {
    cloud = parsePcd(await resp.arrayBuffer());
    drawCloud();
  }
}

function drawCloud() {
  if (!cloud) return;
  const canvas = qs<HTMLCanvasElement>("#cloud");
  const ctx = canvas.getContext("2d")!;
  ctx.fillStyle = "#101018";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const projected = projectCloud(cloud, orbit, canvas.width, canvas.height);
  const image = ctx.getImageData(0, 0, canvas.width, canvas.height);
  for (const p of projected) {
    const x = Math.round(p.x);
    const y = Math.round(p.y);
    if (x < 0 || y < 0 || x >= canvas.width || y >= canvas.height) continue;
    const o = 4 * (y * canvas.width + x);
    image.data[o] = cloud.colors[3 * p.colorIndex];
    image.data[o + 1] = cloud.colors[3 * p.colorIndex + 1];
    image.data[o + 2] = cloud.colors[3 * p.colorIndex + 2];
    image.data[o + 3] = 255;
  }
  ctx.putImageData(image, 0, 0);
  qs<HTMLSpanElement>("#cloud-info").textContent =
    cloud.count === 0 ? "empty cloud" : `${cloud.count} points`;
}

function wireUi() {
  qs<HTMLButtonElement>("#connect").onclick = connect;

  const slider = qs<HTMLInputElement>("#plane-depth");
  slider.oninput = () => {
    const depth = parseFloat(slider.value);
    if (!planeDepthValid(depth)) return; // blocked client-side
    coalescer.push(setPlaneDepth(sessionId, depth));
  };

  qs<HTMLButtonElement>("#replay-open").onclick = async () => {
    await fetch(`/sessions/${sessionId}/replay`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ mode: "frame_by_frame" }),
    });
    await loadMetrics();
    transport?.seek(0);
  };

  const seekBar = qs<HTMLInputElement>("#seek");
  seekBar.oninput = () => {
    transport?.seek(parseInt(seekBar.value, 10));
  };
  qs<HTMLButtonElement>("#step-back").onclick = () => transport?.step(-1);
  qs<HTMLButtonElement>("#step-forward").onclick = () => transport?.step(1);
  qs<HTMLButtonElement>("#cloud-load").onclick = () =>
    void loadCloud(state.frameIndexShown() ?? 0);

  const canvas = qs<HTMLCanvasElement>("#cloud");
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.onpointerdown = (e) => {
    dragging = true;
    last = [e.clientX, e.clientY];
    canvas.setPointerCapture(e.pointerId);
  };
  canvas.onpointermove = (e) => {
    if (!dragging) return;
    orbit = rotateOrbit(orbit, (e.clientX - last[0]) * 0.01, (e.clientY - last[1]) * 0.01);
    last = [e.clientX, e.clientY];
    drawCloud();
  };
  canvas.onpointerup = () => {
    dragging = false;
  };
  canvas.onwheel = (e) => {
    e.preventDefault();
    orbit = zoomOrbit(orbit, e.deltaY > 0 ? 1.1 : 0.9);
    drawCloud();
  };
}

wireUi();
