import init, { WebDemo } from "./pkg/cardiff_web.js";

const CAP = 400;
const METHOD_COLORS = { gd: "#1f77b4", nr: "#ff7f0e", cardiff: "#2ca02c" };
const SWEEP_COLORS = ["#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628", "#f781bf", "#555555"];

const $ = (id) => document.getElementById(id);
const status = (msg) => { $("status").textContent = msg; };

let demo, view, start = [-0.3, 0.9625];
let background, marks, paths = [], sweepEnds = [];

// Dark blue through teal to yellow.
const STOPS = [[13, 8, 135], [84, 2, 163], [139, 10, 165], [185, 50, 137], [219, 92, 104], [244, 136, 73], [254, 188, 43], [240, 249, 33]];
function color(v) {
  const t = Math.min(1, Math.log1p(Math.max(v, 0)) / Math.log1p(CAP)) * (STOPS.length - 1);
  const i = Math.min(Math.floor(t), STOPS.length - 2), f = t - i;
  return STOPS[i].map((c, k) => Math.round(c + f * (STOPS[i + 1][k] - c)));
}

function toPixel(canvas, x, y) {
  return [
    ((x - view[0]) / (view[2] - view[0])) * canvas.width,
    (1 - (y - view[1]) / (view[3] - view[1])) * canvas.height,
  ];
}

function toWorld(canvas, px, py) {
  return [
    view[0] + (px / canvas.width) * (view[2] - view[0]),
    view[1] + (1 - py / canvas.height) * (view[3] - view[1]),
  ];
}

function renderBackground(canvas) {
  const nx = 150, ny = 130;
  const values = demo.landscape(nx, ny, CAP);
  const small = new OffscreenCanvas(nx, ny);
  const ctx = small.getContext("2d");
  const img = ctx.createImageData(nx, ny);
  for (let j = 0; j < ny; j++) {
    for (let i = 0; i < nx; i++) {
      const [r, g, b] = color(values[j * nx + i]);
      const o = ((ny - 1 - j) * nx + i) * 4;
      img.data[o] = r; img.data[o + 1] = g; img.data[o + 2] = b; img.data[o + 3] = 255;
    }
  }
  ctx.putImageData(img, 0, 0);
  return small;
}

function drawLandscape() {
  const canvas = $("landscape"), ctx = canvas.getContext("2d");
  ctx.imageSmoothingEnabled = true;
  ctx.drawImage(background, 0, 0, canvas.width, canvas.height);

  for (const m of marks) {
    const [px, py] = toPixel(canvas, m.x[0], m.x[1]);
    ctx.strokeStyle = ctx.fillStyle = "#fff";
    ctx.lineWidth = 2;
    if (m.label === "saddle") {
      ctx.beginPath();
      ctx.moveTo(px - 5, py - 5); ctx.lineTo(px + 5, py + 5);
      ctx.moveTo(px + 5, py - 5); ctx.lineTo(px - 5, py + 5);
      ctx.stroke();
    } else {
      ctx.beginPath(); ctx.arc(px, py, 4, 0, 2 * Math.PI); ctx.fill();
    }
  }

  for (const p of paths) {
    ctx.strokeStyle = METHOD_COLORS[p.method];
    ctx.lineWidth = 2;
    ctx.beginPath();
    p.points.forEach(([x, y], k) => {
      const [px, py] = toPixel(canvas, x, y);
      k ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
    });
    ctx.stroke();
    const [ex, ey] = toPixel(canvas, p.end[0], p.end[1]);
    ctx.fillStyle = METHOD_COLORS[p.method];
    ctx.fillRect(ex - 4, ey - 4, 8, 8);
  }

  sweepEnds.forEach((end, k) => {
    const [px, py] = toPixel(canvas, end[0], end[1]);
    ctx.strokeStyle = SWEEP_COLORS[k % SWEEP_COLORS.length];
    ctx.lineWidth = 2;
    ctx.beginPath(); ctx.arc(px, py, 7, 0, 2 * Math.PI); ctx.stroke();
  });

  const [sx, sy] = toPixel(canvas, start[0], start[1]);
  ctx.fillStyle = "#000";
  ctx.strokeStyle = "#fff";
  ctx.beginPath(); ctx.arc(sx, sy, 5, 0, 2 * Math.PI); ctx.fill(); ctx.stroke();
}

const fmt = (v) => (Math.abs(v) >= 1e4 || (v !== 0 && Math.abs(v) < 1e-3) ? v.toExponential(2) : v.toFixed(3));

function fillTable(id, rows) {
  $(id).querySelector("tbody").innerHTML = rows.map((cells) => `<tr>${cells.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
}

function runCompare() {
  const lambda = Number($("lambda").value);
  status("running...");
  // Let the status line paint before the blocking call.
  setTimeout(() => {
    try {
      paths = JSON.parse(demo.compare(start[0], start[1], lambda));
      sweepEnds = [];
      fillTable("compare", paths.map((p) => [
        `<span class="swatch" style="background:${METHOD_COLORS[p.method]}"></span>${p.method}`,
        `${fmt(p.end[0])}, ${fmt(p.end[1])}`,
        fmt(p.phi),
        p.saddle ? `${p.basin} (indefinite)` : p.basin,
        p.iterations,
      ]));
      status("");
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
    drawLandscape();
  }, 10);
}

function drawGammas(rows) {
  const canvas = $("gammas"), ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const pad = 40, w = canvas.width - 2 * pad, h = canvas.height - 2 * pad;
  const all = rows.flatMap((r) => r.gammas);
  if (!all.length) return;
  let lo = Math.min(0, ...all), hi = Math.max(0, ...all);
  if (hi === lo) hi = lo + 1;
  const n = Math.max(...rows.map((r) => r.gammas.length));
  const X = (k) => pad + (n > 1 ? (k / (n - 1)) * w : 0);
  const Y = (v) => pad + (1 - (v - lo) / (hi - lo)) * h;

  ctx.strokeStyle = "#999"; ctx.lineWidth = 1;
  ctx.beginPath(); ctx.moveTo(pad, Y(0)); ctx.lineTo(pad + w, Y(0)); ctx.stroke();
  ctx.fillStyle = "#444"; ctx.font = "11px system-ui";
  ctx.fillText(fmt(hi), 2, pad + 4);
  ctx.fillText(fmt(lo), 2, pad + h);
  ctx.fillText("reverse step", pad + w / 2 - 30, canvas.height - 8);
  ctx.fillText("γ", 8, pad + h / 2);

  rows.forEach((r, k) => {
    ctx.strokeStyle = SWEEP_COLORS[k % SWEEP_COLORS.length];
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    r.gammas.forEach((g, i) => (i ? ctx.lineTo(X(i), Y(g)) : ctx.moveTo(X(i), Y(g))));
    ctx.stroke();
  });
}

function runSweep() {
  const lambdas = $("lambdas").value.split(/[\s,]+/).filter(Boolean).map(Number);
  if (!lambdas.length || lambdas.some((l) => !(l >= 0))) {
    status("λ values must be non-negative numbers");
    return;
  }
  const clip = Number($("clip").value);
  status("sweeping...");
  setTimeout(() => {
    try {
      const rows = JSON.parse(demo.sweep(start[0], start[1], new Float64Array(lambdas), clip));
      sweepEnds = rows.map((r) => r.end);
      paths = [];
      fillTable("sweeprows", rows.map((r, k) => [
        `<span class="swatch" style="background:${SWEEP_COLORS[k % SWEEP_COLORS.length]}"></span>${r.lambda}`,
        `${fmt(r.end[0])}, ${fmt(r.end[1])}`,
        fmt(r.phi),
        r.basin,
        r.clip_events,
      ]));
      drawGammas(rows);
      status("");
    } catch (e) {
      status(`error: ${e.message ?? e}`);
    }
    drawLandscape();
  }, 10);
}

async function main() {
  await init();
  demo = new WebDemo();
  view = demo.view();
  marks = JSON.parse(demo.landmarks());
  background = renderBackground($("landscape"));

  $("landscape").addEventListener("click", (ev) => {
    const canvas = ev.currentTarget, rect = canvas.getBoundingClientRect();
    const px = ((ev.clientX - rect.left) / rect.width) * canvas.width;
    const py = ((ev.clientY - rect.top) / rect.height) * canvas.height;
    start = toWorld(canvas, px, py).map((v) => Math.round(v * 1000) / 1000);
    $("start").textContent = `${start[0]}, ${start[1]}`;
    runCompare();
  });
  $("run").addEventListener("click", runCompare);
  $("sweep").addEventListener("click", runSweep);
  runCompare();
}

main().catch((e) => status(`failed to load: ${e.message ?? e}`));
