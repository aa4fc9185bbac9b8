/**
 * Deterministic vector face drawing from server-provided preview data.
 *
 * Pure function of the payload: the same landmarks and appearance always
 * produce the identical SVG string (coordinates fixed to 4 decimals), so
 * drawings are snapshot-comparable.  No parameter math happens here; the
 * server's landmark positions are drawn as-is.
 */

import type { PreviewData } from "./api.js";

const VIEW = 100;

function pt(landmarks: Map<string, [number, number]>, name: string): [number, number] {
  const p = landmarks.get(name);
  if (!p) throw new Error(`missing landmark ${name}`);
  return [p[0] * VIEW, p[1] * VIEW];
}

function fmt(v: number): string {
  return v.toFixed(4);
}

function path(points: [number, number][], close: boolean): string {
  const body = points.map(([x, y], i) => `${i === 0 ? "M" : "L"}${fmt(x)} ${fmt(y)}`).join(" ");
  return close ? body + " Z" : body;
}

/** Map an appearance feature triple in [-1, 1]^3 to a hex color. */
function featureColor(appearance: number[], offset: number, base: number, range: number): string {
  const channel = (k: number): string => {
    const v = appearance[(offset + k) % appearance.length] ?? 0;
    const byte = Math.round(base + ((v + 1) / 2) * range);
    return Math.min(255, Math.max(0, byte)).toString(16).padStart(2, "0");
  };
  return `#${channel(0)}${channel(1)}${channel(2)}`;
}

function validate(preview: PreviewData): Map<string, [number, number]> {
  if (
    !preview ||
    !Array.isArray(preview.landmarks) ||
    !Array.isArray(preview.landmark_names) ||
    preview.landmarks.length !== preview.landmark_names.length ||
    preview.landmarks.length === 0
  ) {
    throw new Error("malformed preview payload");
  }
  const landmarks = new Map<string, [number, number]>();
  preview.landmark_names.forEach((name, i) => {
    const p = preview.landmarks[i];
    if (!Array.isArray(p) || p.length !== 2 || !Number.isFinite(p[0]) || !Number.isFinite(p[1])) {
      throw new Error(`malformed landmark ${name}`);
    }
    landmarks.set(name, [p[0], p[1]]);
  });
  return landmarks;
}

/** Placeholder scene shown when the payload cannot be drawn. */
export function placeholderFace(note: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${VIEW} ${VIEW}" class="face-placeholder">` +
    `<rect x="0" y="0" width="${VIEW}" height="${VIEW}" fill="#f4f4f4"/>` +
    `<circle cx="50" cy="45" r="28" fill="none" stroke="#bbb" stroke-dasharray="4 3"/>` +
    `<text x="50" y="90" text-anchor="middle" font-size="6" fill="#888">${note}</text>` +
    `</svg>`
  );
}

export function renderFaceSVG(preview: PreviewData): string {
  let landmarks: Map<string, [number, number]>;
  try {
    landmarks = validate(preview);
  } catch (err) {
    return placeholderFace(err instanceof Error ? err.message : "invalid preview");
  }
  try {
    const appearance = preview.appearance ?? [];
    const skin = featureColor(appearance, 0, 225, 25);
    const lip = featureColor(appearance, 3, 140, 80);
    const shadow = featureColor(appearance, 6, 170, 60);

    const outline = path(
      [0, 1, 2, 3, 4, 5, 6, 7].map((k) => pt(landmarks, `outline_${k}`)),
      true,
    );
    const [chinX, chinY] = pt(landmarks, "chin");
    const nose = path(
      [pt(landmarks, "nose_wing_l"), pt(landmarks, "nose_tip"), pt(landmarks, "nose_wing_r")],
      false,
    );
    const mouth = path(
      [
        pt(landmarks, "mouth_l"),
        pt(landmarks, "mouth_top"),
        pt(landmarks, "mouth_r"),
        pt(landmarks, "mouth_bottom"),
      ],
      true,
    );

    const parts: string[] = [
      `<path d="${outline}" fill="${skin}" stroke="#444" stroke-width="0.8"/>`,
    ];
    for (const side of ["l", "r"]) {
      const [ex, ey] = pt(landmarks, `eye_${side}`);
      const [bx, by] = pt(landmarks, `brow_${side}`);
      parts.push(
        `<ellipse cx="${fmt(ex)}" cy="${fmt(ey)}" rx="4.2" ry="3" fill="${shadow}" opacity="0.55"/>`,
        `<circle cx="${fmt(ex)}" cy="${fmt(ey)}" r="1.6" fill="#222"/>`,
        `<path d="M${fmt(bx - 5)} ${fmt(by)} L${fmt(bx + 5)} ${fmt(by - 1)}" stroke="#333" stroke-width="1.1" fill="none"/>`,
      );
    }
    parts.push(
      `<path d="${nose}" fill="none" stroke="#555" stroke-width="0.9"/>`,
      `<path d="${mouth}" fill="${lip}" stroke="#70333f" stroke-width="0.6"/>`,
      `<path d="M${fmt(chinX - 4)} ${fmt(chinY)} Q${fmt(chinX)} ${fmt(chinY + 2)} ${fmt(chinX + 4)} ${fmt(chinY)}" stroke="#999" stroke-width="0.5" fill="none"/>`,
    );
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${VIEW} ${VIEW}" class="face">` +
      parts.join("") +
      `</svg>`
    );
  } catch (err) {
    return placeholderFace(err instanceof Error ? err.message : "drawing failed");
  }
}
