import init, { feasibility, randomRate, TrainingSession } from "./pkg/intent_emcom_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const WINDOW = 50;
const CHUNK = 10;

function fail(outId, e) {
  const el = $(outId);
  el.className = "out err";
  el.textContent = String(e.message ?? e);
}

function say(outId, text) {
  const el = $(outId);
  el.className = "out";
  el.textContent = text;
}

function bars(canvas, values, colors, labels, yMax) {
  const g = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 24;
  g.clearRect(0, 0, w, h);
  const bw = (w - 2 * pad) / values.length;
  g.font = "11px sans-serif";
  values.forEach((v, i) => {
    const bh = Math.max(0, Math.min(1, v / yMax)) * (h - 2 * pad);
    g.fillStyle = colors[i];
    g.fillRect(pad + i * bw + 2, h - pad - bh, bw - 4, bh);
    g.fillStyle = "#333";
    g.fillText(labels[i], pad + i * bw + 4, h - 8);
  });
}

function checkFeasibility() {
  try {
    const rows = JSON.parse(feasibility(num("f-m"), num("f-a"), num("f-c"), num("f-du"), num("f-dc")));
    const du = num("f-du") / 1000, dc = num("f-dc") / 1000;
    // bar height: the worse of the two time-to-deadline ratios, capped at 2
    const ratio = rows.map((r) => Math.min(2, Math.max(r.uplink_time_s / du, r.compute_time_s / dc)));
    bars($("f-canvas"), ratio, rows.map((r) => (r.feasible ? "#2a9d4b" : "#c0392b")),
      rows.map((r) => "s" + r.slice_id), 2);
    const ok = rows.filter((r) => r.feasible).map((r) => r.slice_id);
    say("f-out", `feasible slices: ${ok.length ? ok.join(", ") : "none"}  (bar = time / deadline, 1.0 at mid-height)`);
  } catch (e) {
    fail("f-out", e);
  }
}

function estimateRate() {
  try {
    const r = JSON.parse(randomRate(num("r-m"), num("r-n"), BigInt(num("r-s"))));
    bars($("r-canvas"), r.per_slice, r.per_slice.map(() => "#3b6fb6"),
      r.per_slice.map((_, i) => "s" + (i + 1)), 1);
    say("r-out", `random pick success ${r.random_rate.toFixed(4)} over ${r.samples} intents`);
  } catch (e) {
    fail("r-out", e);
  }
}

function smooth(xs) {
  const out = [];
  let sum = 0;
  xs.forEach((x, i) => {
    sum += x;
    if (i >= WINDOW) sum -= xs[i - WINDOW];
    out.push(sum / Math.min(i + 1, WINDOW));
  });
  return out;
}

function drawCurve(canvas, raw, total) {
  const g = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  g.clearRect(0, 0, w, h);
  g.strokeStyle = "#999";
  g.strokeRect(pad, pad / 2, w - 1.5 * pad, h - 1.5 * pad);
  g.fillStyle = "#333";
  g.font = "11px sans-serif";
  g.fillText("1.0", 4, pad / 2 + 4);
  g.fillText("0.0", 4, h - pad + 4);
  g.fillText(`normalized success (moving average, window ${WINDOW})`, pad + 6, pad / 2 + 14);
  const x = (i) => pad + (i / Math.max(1, total - 1)) * (w - 1.5 * pad);
  const y = (v) => h - pad - v * (h - 1.5 * pad);
  g.strokeStyle = "#3b6fb6";
  g.beginPath();
  smooth(raw).forEach((v, i) => (i ? g.lineTo(x(i), y(v)) : g.moveTo(x(i), y(v))));
  g.stroke();
}

let stopRequested = false;

async function train() {
  let session;
  try {
    session = new TrainingSession($("t-scheme").value, num("t-n"), 10, BigInt(num("t-s")));
  } catch (e) {
    fail("t-out", e);
    return;
  }
  const total = Math.max(1, num("t-ep"));
  const curve = [];
  stopRequested = false;
  $("t-run").disabled = true;
  $("t-stop").disabled = false;
  try {
    while (curve.length < total && !stopRequested) {
      const chunk = JSON.parse(session.train(Math.min(CHUNK, total - curve.length)));
      curve.push(...chunk.success);
      drawCurve($("t-canvas"), curve, total);
      say("t-out", `${curve.length} / ${total} episodes`);
      await new Promise(requestAnimationFrame);
    }
    const test = JSON.parse(session.test(100)).success;
    const mean = test.reduce((a, b) => a + b, 0) / test.length;
    say("t-out", `${curve.length} training episodes; greedy test over 100 episodes: ${mean.toFixed(4)}`);
  } catch (e) {
    fail("t-out", e);
  } finally {
    session.free();
    $("t-run").disabled = false;
    $("t-stop").disabled = true;
  }
}

await init();
$("f-run").onclick = checkFeasibility;
$("r-run").onclick = estimateRate;
$("t-run").onclick = train;
$("t-stop").onclick = () => (stopRequested = true);
checkFeasibility();
estimateRate();
