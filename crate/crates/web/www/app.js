import init, { couple, transmit, firstTokenHistogram } from "./pkg/imec_web.js";

const $ = (id) => document.getElementById(id);
const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

function parseWeights(text) {
  const values = text.split(/[\s,]+/).filter(Boolean).map(Number);
  if (values.length === 0 || values.some((v) => !Number.isFinite(v))) {
    throw new Error("weights must be a comma-separated list of numbers");
  }
  return new Float64Array(values);
}

function run(errorId, fn) {
  $(errorId).textContent = "";
  try {
    fn();
  } catch (e) {
    $(errorId).textContent = e.message ?? String(e);
  }
}

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, 10);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - 10, h - pad);
  ctx.stroke();
}

function drawEntropy(result) {
  const canvas = $("entropy-plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  axes(ctx, w, h, pad);
  const steps = result.steps;
  if (steps.length === 0) return;
  const blocks = steps[0].posterior_entropies.length;
  const top = Math.max(...steps[0].posterior_entropies, result.initial_entropy / blocks);
  const x = (i) => pad + ((w - pad - 10) * i) / steps.length;
  const y = (v) => h - pad - ((h - pad - 10) * v) / top;
  for (let b = 0; b < blocks; b++) {
    ctx.strokeStyle = COLORS[b % COLORS.length];
    ctx.beginPath();
    ctx.moveTo(x(0), y(result.initial_entropy / blocks));
    steps.forEach((s, i) => ctx.lineTo(x(i + 1), y(s.posterior_entropies[b])));
    ctx.stroke();
  }
  ctx.fillStyle = "#555";
  ctx.font = "12px system-ui";
  ctx.fillText(`${top.toFixed(0)} bits`, 2, 20);
  ctx.fillText(`${steps.length} tokens`, w - 80, h - 10);
}

function showTransmit(result) {
  const rows = [
    ["stegotext", result.stegotext],
    ["recovered", result.recovered],
    ["bit errors", result.bit_errors],
    ["coupling tokens", result.steps.length],
    ["max per-step KL", result.max_kl.toExponential(2) + " bits"],
    ["key", result.key_hex],
  ];
  $("transmit-out").replaceChildren(
    ...rows.flatMap(([k, v]) => {
      const dt = document.createElement("dt");
      const dd = document.createElement("dd");
      dt.textContent = k;
      dd.textContent = v;
      return [dt, dd];
    }),
  );
  drawEntropy(result);
}

function showCoupling(result) {
  const grid = Array.from({ length: result.rows }, () => new Array(result.cols).fill(0));
  for (const [r, c, m] of result.cells) grid[r][c] = m;
  $("couple-table").replaceChildren(
    ...grid.map((row) => {
      const tr = document.createElement("tr");
      for (const m of row) {
        const td = document.createElement("td");
        td.textContent = m === 0 ? "0" : m.toFixed(4);
        if (m === 0) td.className = "zero";
        tr.appendChild(td);
      }
      return tr;
    }),
  );
  const exact = result.exact_entropy == null ? "" : `, optimum ${result.exact_entropy.toFixed(4)}`;
  $("couple-summary").textContent =
    `H(coupling) = ${result.entropy.toFixed(4)} bits${exact}; ` +
    `H(left) = ${result.left_entropy.toFixed(4)}, H(right) = ${result.right_entropy.toFixed(4)}`;
}

function drawHistogram(result) {
  const canvas = $("histogram-plot");
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  axes(ctx, w, h, pad);
  const freq = result.stego_counts.map((c) => c / result.trials);
  const top = Math.max(...freq, ...result.cover) * 1.1;
  const slot = (w - pad - 10) / result.cover.length;
  const bar = (i, v, offset, color) => {
    const bh = ((h - pad - 10) * v) / top;
    ctx.fillStyle = color;
    ctx.fillRect(pad + i * slot + offset, h - pad - bh, slot * 0.4, bh);
  };
  result.cover.forEach((p, i) => bar(i, p, slot * 0.1, "#bbb"));
  freq.forEach((f, i) => bar(i, f, slot * 0.5, "#1f77b4"));
  $("histogram-caption").textContent =
    `Grey: channel probability. Blue: observed stegotoken frequency over ${result.trials} ciphertexts ` +
    `(empirical KL ${result.empirical_kl.toExponential(2)} bits).`;
}

await init();

$("transmit-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const f = new FormData(ev.target);
  run("transmit-error", () => {
    const request = {
      channel: f.get("channel"),
      message: f.get("message"),
      block_bits: Number(f.get("block_bits")),
      threshold: Number(f.get("threshold")),
      seed: Number(f.get("seed")),
    };
    showTransmit(JSON.parse(transmit(JSON.stringify(request))));
  });
});

$("couple-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const f = new FormData(ev.target);
  run("couple-error", () => {
    showCoupling(JSON.parse(couple(parseWeights(f.get("p")), parseWeights(f.get("q")))));
  });
});

$("histogram-form").addEventListener("submit", (ev) => {
  ev.preventDefault();
  const f = new FormData(ev.target);
  run("histogram-error", () => {
    const result = firstTokenHistogram(
      parseWeights(f.get("weights")),
      Number(f.get("block_bits")),
      Number(f.get("trials")),
      Math.floor(Math.random() * 2 ** 32),
    );
    drawHistogram(JSON.parse(result));
  });
});

for (const id of ["transmit-form", "couple-form", "histogram-form"]) {
  $(id).requestSubmit();
}
