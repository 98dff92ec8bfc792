/**
 * Architecture tables: the conv layers each export target must provide,
 * with their expected shapes and the checkpoint keys they may come from.
 *
 * Checkpoint keys are tried in order: the canonical layer name itself
 * (e.g. "conv3_1.weight"), then the torchvision sequential index
 * ("features.10.weight") for the VGG classifiers.  Decoder checkpoints
 * use the canonical names only.
 */

export interface ConvSpec {
    /** canonical layer name, e.g. "conv1_1" or "dec3_conv2_2" */
    name: string;
    outChannels: number;
    inChannels: number;
    /** alternative checkpoint key prefixes (tried after the canonical name) */
    aliases: string[];
}

export const ARCH_IDS = ["vgg16", "vgg19-encoders", "ust-decoders"] as const;
export type ArchId = (typeof ARCH_IDS)[number];

const VGG16_WIDTHS: Array<[number, number]> = [
    [64, 2], [128, 2], [256, 3], [512, 3], [512, 3],
];
const VGG19_WIDTHS: Array<[number, number]> = [
    [64, 2], [128, 2], [256, 4], [512, 4], [512, 4],
];

const TORCHVISION_VGG16 = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];
const TORCHVISION_VGG19 = [0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28];

function vggConvs(
    widths: Array<[number, number]>,
    torchvisionIdx: number[],
    stopAt?: string,
): ConvSpec[] {
    const out: ConvSpec[] = [];
    let inC = 3;
    let k = 0;
    for (let b = 0; b < widths.length; b++) {
        const [width, count] = widths[b];
        for (let i = 1; i <= count; i++) {
            const name = `conv${b + 1}_${i}`;
            out.push({
                name,
                outChannels: width,
                inChannels: inC,
                aliases: k < torchvisionIdx.length ? [`features.${torchvisionIdx[k]}`] : [],
            });
            inC = width;
            k += 1;
            if (stopAt && name === stopAt) return out;
        }
    }
    return out;
}

/** Mirrored decoder convs for one encoder level (pool -> upsample implied). */
function decoderConvs(level: number): ConvSpec[] {
    const enc = vggConvs(VGG19_WIDTHS, [], `conv${level}_1`);
    return enc
        .slice()
        .reverse()
        .map((c) => ({
            name: `dec${level}_${c.name}`,
            outChannels: c.inChannels,
            inChannels: c.outChannels,
            aliases: [],
        }));
}

export function architecture(id: string): ConvSpec[] {
    switch (id) {
        case "vgg16":
            return vggConvs(VGG16_WIDTHS, TORCHVISION_VGG16);
        case "vgg19-encoders":
            return vggConvs(VGG19_WIDTHS, TORCHVISION_VGG19, "conv5_1");
        case "ust-decoders": {
            const out: ConvSpec[] = [];
            for (let level = 1; level <= 5; level++) out.push(...decoderConvs(level));
            return out;
        }
        default:
            throw new Error(
                `unknown architecture '${id}' (expected ${ARCH_IDS.join(", ")})`,
            );
    }
}
