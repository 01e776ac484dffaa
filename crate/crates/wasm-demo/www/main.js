import init, { Demo } from "./pkg/ddrecon_wasm_demo.js";

const $ = (id) => document.getElementById(id);
let demo = null;

function draw(id, pixels, size) {
  const canvas = $(id);
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d");
  const img = ctx.createImageData(size, size);
  for (let i = 0; i < pixels.length; i++) {
    img.data[4 * i] = img.data[4 * i + 1] = img.data[4 * i + 2] = pixels[i];
    img.data[4 * i + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
}

const fmt = (s) => `NMSE ${s.nmse.toFixed(2)}%  SSIM ${s.ssim.toFixed(3)}  PSNR ${s.psnr.toFixed(1)} dB`;

function consistency() {
  const lambda = Number($("lambda").value);
  $("lambda-v").textContent = lambda.toFixed(2);
  draw("dc", demo.consistentPixels(lambda), demo.size());
  $("dc-cap").textContent = "blurred prediction + DC: " + fmt(demo.consistentScores(lambda));
}

function undersample() {
  const acc = Number($("acc").value);
  const cf = Number($("cf").value);
  $("acc-v").textContent = acc + "x";
  $("cf-v").textContent = cf.toFixed(2);
  try {
    const scores = demo.undersample(acc, cf, Number($("mask-seed").value));
    $("status").textContent = `${demo.keptLines()} of ${demo.size()} lines kept`;
    draw("kspace", demo.kspacePixels(), demo.size());
    draw("zerofill", demo.zeroFillPixels(), demo.size());
    $("zerofill-cap").textContent = "zero-filled: " + fmt(scores);
    consistency();
  } catch (e) {
    $("status").textContent = e.message;
  }
}

function simulate() {
  try {
    const next = new Demo(Number($("size").value), Number($("ncoil").value), Number($("seed").value));
    if (demo) demo.free();
    demo = next;
  } catch (e) {
    $("status").textContent = e.message;
    return;
  }
  draw("truth", demo.truthPixels(), demo.size());
  undersample();
}

await init();
$("simulate").addEventListener("click", simulate);
for (const id of ["acc", "cf", "mask-seed"]) $(id).addEventListener("input", undersample);
$("lambda").addEventListener("input", consistency);
simulate();
