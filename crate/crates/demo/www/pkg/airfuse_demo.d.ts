/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * WLS exponential fit: nugget, partial sill, range.
     */
    fit_variogram(n_bins: number): Float64Array;
    /**
     * IDW surface; a cutoff of 0 means none. Cells with no site in range
     * are NaN.
     */
    idw(phi: number, cutoff_km: number): Float64Array;
    /**
     * Leave-one-site-out RMSE of IDW at `phi`.
     */
    idw_loo_rmse(phi: number): number;
    /**
     * Universal kriging with the model output as the trend, at fixed
     * covariance parameters. Returns the means followed by the standard
     * deviations.
     */
    kriging(nugget: number, partial_sill: number, range_km: number): Float64Array;
    /**
     * Cell values in grid order, row 0 southernmost.
     */
    model_output(): Float64Array;
    /**
     * Synthetic day on a 30 x 45 grid of 20 km cells.
     */
    constructor(seed: number, n_sites: number);
    /**
     * Per site: x and y as fractions of the grid extent, then the value.
     */
    sites(): Float64Array;
    truth(): Float64Array;
    /**
     * Binned semivariogram of the day's OLS residuals: lag, gamma and
     * pair count per bin.
     */
    variogram(n_bins: number): Float64Array;
    readonly n_cols: number;
    readonly n_rows: number;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_fit_variogram: (a: number, b: number) => [number, number, number, number];
    readonly demo_idw: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_idw_loo_rmse: (a: number, b: number) => [number, number, number];
    readonly demo_kriging: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_model_output: (a: number) => [number, number];
    readonly demo_n_cols: (a: number) => number;
    readonly demo_n_rows: (a: number) => number;
    readonly demo_new: (a: number, b: number) => [number, number, number];
    readonly demo_sites: (a: number) => [number, number];
    readonly demo_truth: (a: number) => [number, number];
    readonly demo_variogram: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
