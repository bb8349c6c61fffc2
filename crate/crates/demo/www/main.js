import init, { dytCurve, lrCurve, Session } from "./pkg/dyttp_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  const pad = 30;
  const all = series.flatMap((s) => s.points);
  const xs = all.map((p) => p[0]);
  const ys = all.map((p) => p[1]);
  let [x0, x1, y0, y1] = [Math.min(...xs), Math.max(...xs), Math.min(...ys), Math.max(...ys)];
  if (opts.equal) {
    const span = Math.max(x1 - x0, (y1 - y0) * (w - 2 * pad) / (h - 2 * pad), 1e-9);
    const cx = (x0 + x1) / 2;
    const cy = (y0 + y1) / 2;
    const sy = span * (h - 2 * pad) / (w - 2 * pad);
    [x0, x1, y0, y1] = [cx - span / 2, cx + span / 2, cy - sy / 2, cy + sy / 2];
  }
  if (y1 === y0) { y0 -= 1; y1 += 1; }
  const sx = (x) => pad + (x - x0) / (x1 - x0) * (w - 2 * pad);
  const sy = (y) => h - pad - (y - y0) / (y1 - y0) * (h - 2 * pad);
  ctx.strokeStyle = "#ddd";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  ctx.fillText(y1.toPrecision(3), 2, pad + 4);
  ctx.fillText(y0.toPrecision(3), 2, h - pad);
  ctx.fillText(x0.toPrecision(3), pad, h - 10);
  ctx.fillText(x1.toPrecision(3), w - pad - 30, h - 10);
  for (const s of series) {
    if (s.points.length === 0) continue;
    ctx.strokeStyle = s.color;
    ctx.globalAlpha = s.alpha ?? 1;
    ctx.lineWidth = s.width ?? 2;
    ctx.setLineDash(s.dash ?? []);
    ctx.beginPath();
    s.points.forEach(([x, y], i) => (i ? ctx.lineTo(sx(x), sy(y)) : ctx.moveTo(sx(x), sy(y))));
    ctx.stroke();
  }
  ctx.globalAlpha = 1;
  ctx.setLineDash([]);
}

function drawDyt() {
  const [a, g, b] = ["dyt-alpha", "dyt-gamma", "dyt-beta"].map(num);
  for (const id of ["dyt-alpha", "dyt-gamma", "dyt-beta"]) $(id + "-v").textContent = $(id).value;
  const n = 201;
  const xs = Array.from({ length: n }, (_, i) => -6 + 12 * i / (n - 1));
  const ys = dytCurve(a, g, b, -6, 6, n);
  plot($("dyt-canvas"), [
    { points: xs.map((x) => [x, Math.tanh(x)]), color: "#999", dash: [5, 4], width: 1 },
    { points: xs.map((x, i) => [x, ys[i]]), color: "#1f77b4" },
  ]);
}

function drawLr() {
  try {
    const perEpoch = 8;
    const v = lrCurve(num("lr-min"), num("lr-max"), num("lr-len"), num("lr-cycles"), perEpoch);
    plot($("lr-canvas"), [{ points: Array.from(v, (y, i) => [i / perEpoch, y]), color: "#d62728" }]);
    $("lr-error").textContent = "";
  } catch (e) {
    $("lr-error").textContent = String(e.message ?? e);
  }
}

let session = null;
const status = (text) => ($("tr-status").textContent = text);
const fmt = (m) => `minADE ${m.minADE.toFixed(3)}  minFDE ${m.minFDE.toFixed(3)}  MR ${m.MR.toFixed(3)}`;

function drawScenario() {
  if (!session) return;
  const ens = $("tr-ensemble").checked;
  const idx = Math.min(num("tr-index"), session.valLen() - 1);
  const v = JSON.parse(session.view(idx, ens));
  const palette = ["#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
  const series = [
    ...v.lanes.map((p) => ({ points: p, color: "#bbb", width: 1 })),
    ...v.others.map((p) => ({ points: p, color: "#aaa", width: 1, dash: [2, 3] })),
    { points: v.history, color: "#000" },
    { points: [v.history.at(-1), ...v.future], color: "#1f77b4", width: 3 },
    { points: [v.history.at(-1), ...v.constant_velocity], color: "#999", dash: [6, 4] },
    ...v.modes.map((m, k) => ({
      points: [v.history.at(-1), ...m.points],
      color: palette[k % palette.length],
      alpha: 0.35 + 0.65 * m.prob,
    })),
  ];
  plot($("tr-canvas"), series, { equal: true });
  const probs = v.modes.map((m) => m.prob.toFixed(2)).join(", ");
  const m = JSON.parse(session.metrics(ens));
  status(
    `cycles trained: ${session.cyclesDone()}\n` +
      `scenario ${v.id} (${v.kind}): minADE ${v.min_ade?.toFixed(3)}  minFDE ${v.min_fde?.toFixed(3)}\n` +
      `mode probabilities: ${probs}\n` +
      `validation (${m.count}): ${fmt(m)}\n` +
      `black history, blue ground truth, dashed grey constant velocity, colored modes`,
  );
}

function newSession() {
  try {
    session?.free();
    session = new Session(BigInt(num("tr-seed")), num("tr-count"), num("tr-width"), num("tr-modes"), num("tr-len"));
    $("tr-index").max = session.valLen() - 1;
    $("tr-cycle").disabled = false;
    drawScenario();
  } catch (e) {
    session = null;
    $("tr-cycle").disabled = true;
    status(String(e.message ?? e));
  }
}

function trainCycle() {
  $("tr-cycle").disabled = true;
  status("training...");
  setTimeout(() => {
    try {
      const log = JSON.parse(session.trainCycle());
      drawScenario();
      const losses = log.map((r) => r.train_loss.toFixed(2)).join(" ");
      $("tr-status").textContent += `\nlast cycle losses: ${losses}`;
    } catch (e) {
      status(String(e.message ?? e));
    }
    $("tr-cycle").disabled = false;
  }, 20);
}

await init();
for (const id of ["dyt-alpha", "dyt-gamma", "dyt-beta"]) $(id).addEventListener("input", drawDyt);
for (const id of ["lr-max", "lr-min", "lr-len", "lr-cycles"]) $(id).addEventListener("input", drawLr);
$("tr-new").addEventListener("click", newSession);
$("tr-cycle").addEventListener("click", trainCycle);
$("tr-index").addEventListener("input", drawScenario);
$("tr-ensemble").addEventListener("change", drawScenario);
drawDyt();
drawLr();
newSession();
