import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, describe, expect, it } from "vitest";

import { DimensionMismatch, EmptyInput, NormViolation } from "../src/errors";
import {
  writeEmbeddingFile,
  writeHeadFile,
  writeLabelsFile,
  writeManifest,
  writeSampleIds,
} from "../src/formats";

const tmpRoot = fs.mkdtempSync(path.join(os.tmpdir(), "formats-test-"));
let counter = 0;

afterAll(() => fs.rmSync(tmpRoot, { recursive: true, force: true }));

function tmpFile(name: string): string {
  return path.join(tmpRoot, `${counter++}-${name}`);
}

describe("writeEmbeddingFile", () => {
  it("writes the exact 28-byte header and row-major float32 body", () => {
    const target = tmpFile("plain.emb");
    writeEmbeddingFile(
      target,
      [Float32Array.from([1, 2, 3]), Float32Array.from([4, 5, 6])],
      { normalized: false }
    );
    const buf = fs.readFileSync(target);
    expect(buf.length).toBe(28 + 2 * 3 * 4);
    expect(buf.toString("ascii", 0, 4)).toBe("EMB1");
    expect(buf.readUInt32LE(4)).toBe(1); // version
    expect(buf.readBigUInt64LE(8)).toBe(2n); // N
    expect(buf.readUInt32LE(16)).toBe(3); // D
    expect(buf.readUInt8(20)).toBe(0); // dtype float32
    expect(buf.readUInt8(21)).toBe(0); // normalized flag
    for (let i = 22; i < 28; i++) expect(buf.readUInt8(i)).toBe(0);
    const values = [];
    for (let i = 0; i < 6; i++) values.push(buf.readFloatLE(28 + i * 4));
    expect(values).toEqual([1, 2, 3, 4, 5, 6]);
  });

  it("sets the normalized flag and accepts unit rows", () => {
    const target = tmpFile("unit.emb");
    writeEmbeddingFile(
      target,
      [Float32Array.from([1, 0, 0]), Float32Array.from([0, 0.6, 0.8])],
      { normalized: true }
    );
    const buf = fs.readFileSync(target);
    expect(buf.readUInt8(21)).toBe(1);
    expect(buf.readFloatLE(28 + 4 * 4)).toBe(Math.fround(0.6));
  });

  it("rejects non-unit rows when the normalized flag is requested", () => {
    expect(() =>
      writeEmbeddingFile(tmpFile("bad.emb"), [Float32Array.from([3, 4])], {
        normalized: true,
      })
    ).toThrow(NormViolation);
  });

  it("rejects ragged rows and empty input", () => {
    expect(() =>
      writeEmbeddingFile(
        tmpFile("ragged.emb"),
        [Float32Array.from([1, 0]), Float32Array.from([1, 0, 0])],
        { normalized: false }
      )
    ).toThrow(DimensionMismatch);
    expect(() => writeEmbeddingFile(tmpFile("empty.emb"), [], { normalized: false })).toThrow(
      EmptyInput
    );
    expect(() =>
      writeEmbeddingFile(tmpFile("zerod.emb"), [Float32Array.from([])], { normalized: false })
    ).toThrow(EmptyInput);
  });
});

describe("writeLabelsFile", () => {
  it("writes the 16-byte header and u32 labels", () => {
    const target = tmpFile("labels.lbl");
    writeLabelsFile(target, [0, 2, 1], 3);
    const buf = fs.readFileSync(target);
    expect(buf.length).toBe(16 + 3 * 4);
    expect(buf.toString("ascii", 0, 4)).toBe("LBL1");
    expect(buf.readBigUInt64LE(4)).toBe(3n); // N
    expect(buf.readUInt32LE(12)).toBe(3); // C
    expect([buf.readUInt32LE(16), buf.readUInt32LE(20), buf.readUInt32LE(24)]).toEqual([
      0, 2, 1,
    ]);
  });

  it("rejects labels outside [0, C) and empty input", () => {
    expect(() => writeLabelsFile(tmpFile("oor.lbl"), [0, 3], 3)).toThrow(DimensionMismatch);
    expect(() => writeLabelsFile(tmpFile("neg.lbl"), [-1], 3)).toThrow(DimensionMismatch);
    expect(() => writeLabelsFile(tmpFile("frac.lbl"), [0.5], 3)).toThrow(DimensionMismatch);
    expect(() => writeLabelsFile(tmpFile("none.lbl"), [], 3)).toThrow(EmptyInput);
  });
});

describe("writeHeadFile", () => {
  it("writes the 12-byte header and class-major float32 columns", () => {
    const target = tmpFile("head.hed");
    writeHeadFile(target, [Float32Array.from([1, 0]), Float32Array.from([0.6, 0.8])]);
    const buf = fs.readFileSync(target);
    expect(buf.length).toBe(12 + 2 * 2 * 4);
    expect(buf.toString("ascii", 0, 4)).toBe("HED1");
    expect(buf.readUInt32LE(4)).toBe(2); // D
    expect(buf.readUInt32LE(8)).toBe(2); // C
    // class 0's D values come first, then class 1's
    expect(buf.readFloatLE(12)).toBe(1);
    expect(buf.readFloatLE(16)).toBe(0);
    expect(buf.readFloatLE(20)).toBe(Math.fround(0.6));
    expect(buf.readFloatLE(24)).toBe(Math.fround(0.8));
  });

  it("rejects non-unit columns and dimension mismatches", () => {
    expect(() => writeHeadFile(tmpFile("badnorm.hed"), [Float32Array.from([2, 0])])).toThrow(
      NormViolation
    );
    expect(() =>
      writeHeadFile(tmpFile("ragged.hed"), [
        Float32Array.from([1, 0]),
        Float32Array.from([1, 0, 0]),
      ])
    ).toThrow(DimensionMismatch);
    expect(() => writeHeadFile(tmpFile("none.hed"), [])).toThrow(EmptyInput);
  });
});

describe("writeSampleIds", () => {
  it("writes one id per line with a trailing newline", () => {
    const target = tmpFile("ids.txt");
    writeSampleIds(target, ["a/b.png", "c/d.png"]);
    expect(fs.readFileSync(target, "utf-8")).toBe("a/b.png\nc/d.png\n");
  });

  it("rejects an empty id list", () => {
    expect(() => writeSampleIds(tmpFile("none.txt"), [])).toThrow(EmptyInput);
  });
});

describe("writeManifest", () => {
  it("sorts keys recursively, drops undefined, ends with a newline", () => {
    const target = tmpFile("manifest.json");
    writeManifest(target, {
      models: [{ id: "m", emb_path: "m.emb" }],
      sample_ids_path: "ids.txt",
      labels_path: "labels.lbl",
      head_path: undefined,
    });
    const text = fs.readFileSync(target, "utf-8");
    expect(text.endsWith("\n")).toBe(true);
    expect(text).not.toContain("head_path");
    expect(text.indexOf('"labels_path"')).toBeLessThan(text.indexOf('"models"'));
    expect(text.indexOf('"models"')).toBeLessThan(text.indexOf('"sample_ids_path"'));
    // nested keys are sorted too
    expect(text.indexOf('"emb_path"')).toBeLessThan(text.indexOf('"id"'));
    expect(JSON.parse(text)).toEqual({
      models: [{ id: "m", emb_path: "m.emb" }],
      sample_ids_path: "ids.txt",
      labels_path: "labels.lbl",
    });
  });
});

describe("atomic writes", () => {
  it("leaves no .tmp siblings behind", () => {
    const leftovers = fs.readdirSync(tmpRoot).filter((name) => name.endsWith(".tmp"));
    expect(leftovers).toEqual([]);
  });
});
