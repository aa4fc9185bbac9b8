import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import type { PreviewData } from "../src/api.js";
import { placeholderFace, renderFaceSVG } from "../src/face.js";

const fixtures = JSON.parse(
  readFileSync(join(__dirname, "fixtures", "previews.json"), "utf-8"),
) as { mean: PreviewData; wide_nose: PreviewData };

function wingSeparation(svg: string): number {
  // the nose polyline is the first path drawn with stroke #555
  const match = svg.match(/<path d="M([\d.]+) [\d.]+ L[\d.]+ [\d.]+ L([\d.]+) [\d.]+" fill="none" stroke="#555"/);
  if (!match) throw new Error("nose path not found");
  return Number(match[2]) - Number(match[1]);
}

describe("renderFaceSVG", () => {
  it("is deterministic: same data, identical string", () => {
    const a = renderFaceSVG(fixtures.mean);
    const b = renderFaceSVG(JSON.parse(JSON.stringify(fixtures.mean)));
    expect(a).toBe(b);
  });

  it("matches the golden snapshot for the neutral face", () => {
    expect(renderFaceSVG(fixtures.mean)).toMatchSnapshot();
  });

  it("draws every face part", () => {
    const svg = renderFaceSVG(fixtures.mean);
    expect(svg).toContain("<svg");
    expect((svg.match(/<circle/g) ?? []).length).toBe(2); // two pupils
    expect((svg.match(/<ellipse/g) ?? []).length).toBe(2); // two eyeshadow pads
    expect((svg.match(/<path/g) ?? []).length).toBeGreaterThanOrEqual(6);
  });

  it("widened nose increases the drawn wing separation", () => {
    const neutral = wingSeparation(renderFaceSVG(fixtures.mean));
    const wide = wingSeparation(renderFaceSVG(fixtures.wide_nose));
    expect(wide).toBeGreaterThan(neutral + 1.0); // visibly larger, viewBox units
  });

  it("different appearance changes fill colors only through the data", () => {
    const tinted: PreviewData = {
      ...fixtures.mean,
      appearance: fixtures.mean.appearance.map((v, i) => (i < 9 ? 1.0 : v)),
    };
    expect(renderFaceSVG(tinted)).not.toBe(renderFaceSVG(fixtures.mean));
  });

  it("malformed payloads fall back to the placeholder with a note", () => {
    const empty = renderFaceSVG({ landmarks: [], landmark_names: [], appearance: [] });
    expect(empty).toContain("face-placeholder");
    const mismatched = renderFaceSVG({
      landmarks: [[0.1, 0.2]],
      landmark_names: ["outline_0", "outline_1"],
      appearance: [],
    } as PreviewData);
    expect(mismatched).toContain("face-placeholder");
    const nan = renderFaceSVG({
      ...fixtures.mean,
      landmarks: fixtures.mean.landmarks.map(() => [Number.NaN, 0] as [number, number]),
    });
    expect(nan).toContain("face-placeholder");
    const missing = renderFaceSVG({
      landmarks: [[0.5, 0.5]],
      landmark_names: ["only_one"],
      appearance: [],
    });
    expect(missing).toContain("missing landmark");
  });

  it("placeholder itself is deterministic", () => {
    expect(placeholderFace("x")).toBe(placeholderFace("x"));
  });
});
