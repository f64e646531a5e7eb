/** Bilinear resize for tight row-major RGB buffers. */

/**
 * Resize to dstW x dstH with pixel-center alignment. A same-size call
 * returns the input untouched, so 128x128 sources keep exact bytes.
 */
export function resizeRgb(src: Uint8Array, srcW: number, srcH: number,
                          dstW: number, dstH: number): Uint8Array {
  if (src.length !== srcW * srcH * 3) {
    throw new RangeError(`buffer is ${src.length} bytes, ` +
      `expected ${srcW * srcH * 3} for ${srcW}x${srcH} RGB`);
  }
  if (srcW === dstW && srcH === dstH) return src;

  const out = new Uint8Array(dstW * dstH * 3);
  const xRatio = srcW / dstW;
  const yRatio = srcH / dstH;
  for (let y = 0; y < dstH; y++) {
    const sy = Math.min(Math.max((y + 0.5) * yRatio - 0.5, 0), srcH - 1);
    const y0 = Math.floor(sy);
    const y1 = Math.min(y0 + 1, srcH - 1);
    const fy = sy - y0;
    for (let x = 0; x < dstW; x++) {
      const sx = Math.min(Math.max((x + 0.5) * xRatio - 0.5, 0), srcW - 1);
      const x0 = Math.floor(sx);
      const x1 = Math.min(x0 + 1, srcW - 1);
      const fx = sx - x0;
      const p00 = (y0 * srcW + x0) * 3;
      const p01 = (y0 * srcW + x1) * 3;
      const p10 = (y1 * srcW + x0) * 3;
      const p11 = (y1 * srcW + x1) * 3;
      let dst = (y * dstW + x) * 3;
      for (let c = 0; c < 3; c++) {
        const top = src[p00 + c] * (1 - fx) + src[p01 + c] * fx;
        const bottom = src[p10 + c] * (1 - fx) + src[p11 + c] * fx;
        out[dst++] = Math.round(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}
