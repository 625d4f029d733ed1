/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const allocate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const analyze_spectrum: (a: number, b: number, c: number) => [number, number, number, number];
export const synthetic_layer: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const vgg16_preset: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
