/**
 * Canvas wiring for the annotation tool. All state lives in one
 * AnnotationSession; this file only translates DOM events into session
 * calls and redraws.
 *
 * Mouse: left click adds a vertex to the active lane (drag an existing
 * vertex to move it), right click deletes the vertex under the cursor.
 * Keys: N new lane, 1-7 assign class, Z/Y (with Ctrl) undo/redo,
 * Delete removes the active lane, Tab cycles the active lane.
 */

import { LANE_CLASSES, classForKey } from "./classes.js";
import { exportInterchange, exportTusimple } from "./interchange.js";
import { previewAnchors } from "./preview.js";
import { AnnotationSession, Lane } from "./session.js";
import { decodePpm } from "./ppm.js";

const session = new AnnotationSession();

const canvas = document.getElementById("canvas") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const status = document.getElementById("status")!;
const legend = document.getElementById("legend")!;
let bitmap: ImageBitmap | null = null;
let dragging: { laneId: number; index: number } | null = null;

function say(msg: string): void {
  status.textContent = msg;
}

function drawLegend(): void {
  legend.innerHTML = LANE_CLASSES.map(
    (c) => `<span class="chip"><span class="dot" style="background:${c.color}"></span>` +
           `${c.key}: ${c.name} (=${c.id})</span>`,
  ).join(" ");
}

function redraw(): void {
  const img = session.current;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (bitmap) ctx.drawImage(bitmap, 0, 0);
  if (!img) return;
  for (const lane of img.lanes) {
    const color = lane.classId === null ? "#ff5252"
      : LANE_CLASSES[lane.classId >= 0 && lane.classId <= 6 ? lane.classId : 6].color;
    ctx.strokeStyle = color;
    ctx.lineWidth = lane.id === session.activeLane ? 3 : 1.5;
    ctx.beginPath();
    lane.points.forEach((p, i) => (i === 0 ? ctx.moveTo(p.x, p.y) : ctx.lineTo(p.x, p.y)));
    ctx.stroke();
    ctx.fillStyle = color;
    for (const p of lane.points) {
      ctx.beginPath();
      ctx.arc(p.x, p.y, 4, 0, Math.PI * 2);
      ctx.fill();
    }
    for (const dot of previewAnchors(lane, session.grid, img.width)) {
      ctx.beginPath();
      ctx.arc(dot.x, dot.y, 2.5, 0, Math.PI * 2);
      ctx.strokeStyle = "#ffffff";
      ctx.stroke();
    }
  }
}

function hitVertex(x: number, y: number): { laneId: number; index: number } | null {
  const img = session.current;
  if (!img) return null;
  for (const lane of img.lanes) {
    for (let i = 0; i < lane.points.length; i++) {
      const p = lane.points[i];
      if ((p.x - x) ** 2 + (p.y - y) ** 2 <= 36) return { laneId: lane.id, index: i };
    }
  }
  return null;
}

function canvasPos(ev: MouseEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

canvas.addEventListener("mousedown", (ev) => {
  const { x, y } = canvasPos(ev);
  if (ev.button === 2) {
    const hit = hitVertex(x, y);
    if (hit) {
      session.deletePoint(hit.laneId, hit.index);
      redraw();
    }
    return;
  }
  const hit = hitVertex(x, y);
  if (hit) {
    dragging = hit;
    return;
  }
  if (session.activeLane === null) {
    session.startLane();
    say("started a new lane; press 1-7 to set its class");
  }
  session.addPoint(x, y);
  redraw();
});

canvas.addEventListener("mousemove", (ev) => {
  if (!dragging) return;
  const { x, y } = canvasPos(ev);
  session.movePoint(dragging.laneId, dragging.index, x, y);
  redraw();
});

canvas.addEventListener("mouseup", () => (dragging = null));
canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());

window.addEventListener("keydown", (ev) => {
  if (ev.ctrlKey && ev.key.toLowerCase() === "z") {
    session.undo();
    redraw();
    return;
  }
  if (ev.ctrlKey && ev.key.toLowerCase() === "y") {
    session.redo();
    redraw();
    return;
  }
  if (ev.key.toLowerCase() === "n") {
    session.startLane();
    say("new lane started");
    redraw();
    return;
  }
  if (ev.key === "Delete" && session.activeLane !== null) {
    session.deleteLane(session.activeLane);
    redraw();
    return;
  }
  if (ev.key === "Tab") {
    ev.preventDefault();
    const lanes = session.current?.lanes ?? [];
    if (lanes.length > 0) {
      const at = lanes.findIndex((l: Lane) => l.id === session.activeLane);
      session.activeLane = lanes[(at + 1) % lanes.length].id;
      redraw();
    }
    return;
  }
  const cls = classForKey(ev.key);
  if (cls && session.activeLane !== null) {
    session.assignClass(session.activeLane, cls.id);
    say(`active lane classified as ${cls.name}`);
    redraw();
  }
});

(document.getElementById("file") as HTMLInputElement).addEventListener("change", async (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (!file) return;
  if (file.name.toLowerCase().endsWith(".ppm")) {
    const decoded = decodePpm(await file.arrayBuffer());
    const data = new ImageData(new Uint8ClampedArray(decoded.rgba),
                               decoded.width, decoded.height);
    bitmap = await createImageBitmap(data);
  } else {
    bitmap = await createImageBitmap(file);
  }
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  session.addImage(file.name, bitmap.width, bitmap.height);
  session.selectImage(session.images.length - 1);
  say(`loaded ${file.name} (${bitmap.width}x${bitmap.height})`);
  redraw();
});

function download(name: string, text: string): void {
  const a = document.createElement("a");
  a.href = URL.createObjectURL(new Blob([text], { type: "application/json" }));
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

document.getElementById("export-interchange")!.addEventListener("click", () => {
  try {
    const doc = exportInterchange(session);
    download(doc.image.replace(/\.[^.]+$/, "") + ".annotation.json",
             JSON.stringify(doc, null, 2) + "\n");
    session.dirty = false;
    say("interchange JSON exported");
  } catch (e) {
    say(String(e instanceof Error ? e.message : e));
  }
});

document.getElementById("export-tusimple")!.addEventListener("click", () => {
  try {
    const line = exportTusimple(session);
    download(line.raw_file.replace(/\.[^.]+$/, "") + ".tusimple.jsonl",
             JSON.stringify(line) + "\n");
    say("TuSimple line exported (the CLI converter remains canonical)");
  } catch (e) {
    say(String(e instanceof Error ? e.message : e));
  }
});

for (const field of ["hStart", "hStop", "hStep", "cells"] as const) {
  const input = document.getElementById(field) as HTMLInputElement;
  input.value = String(session.grid[field]);
  input.addEventListener("change", () => {
    const v = parseInt(input.value, 10);
    if (Number.isFinite(v) && v > 0) {
      session.grid = { ...session.grid, [field]: v };
      redraw();
    }
  });
}

drawLegend();
say("open an image to start annotating");
