#!/usr/bin/env python3
"""Regenerate the bundled fixture corpus under fixtures/.

Writes fragments.jsonl, pairs.jsonl, embeddings.tfem (D=16), mock_arbiter.json
and pipeline.ini. Output is deterministic for a given --seed.
"""

import argparse
import hashlib
import json
import math
import random
import re
import struct
import zlib
from pathlib import Path

DIM = 16

# name -> (source, identifiers that a Type-2 rename may touch)
BASE = {
    "sum": ("""public static int sumArray(int[] values) {
    int total = 0;
    for (int i = 0; i < values.length; i++) {
        total += values[i];
    }
    return total;
}""", ["sumArray", "values", "total", "i"]),
    "max": ("""public static int findMax(int[] numbers) {
    if (numbers == null || numbers.length == 0) {
        throw new IllegalArgumentException("empty input");
    }
    int best = numbers[0];
    for (int k = 1; k < numbers.length; k++) {
        if (numbers[k] > best) {
            best = numbers[k];
        }
    }
    return best;
}""", ["findMax", "numbers", "best", "k"]),
    "reverse": ("""public static String reverseText(String text) {
    char[] chars = text.toCharArray();
    int left = 0;
    int right = chars.length - 1;
    while (left < right) {
        char tmp = chars[left];
        chars[left] = chars[right];
        chars[right] = tmp;
        left++;
        right--;
    }
    return new String(chars);
}""", ["reverseText", "text", "chars", "left", "right", "tmp"]),
    "words": ("""public static int countWords(String line) {
    int count = 0;
    boolean inWord = false;
    for (int i = 0; i < line.length(); i++) {
        char c = line.charAt(i);
        if (Character.isWhitespace(c)) {
            inWord = false;
        } else if (!inWord) {
            inWord = true;
            count++;
        }
    }
    return count;
}""", ["countWords", "line", "count", "inWord", "i", "c"]),
    "prime": ("""public static boolean isPrime(int candidate) {
    if (candidate < 2) {
        return false;
    }
    for (int d = 2; d * d <= candidate; d++) {
        if (candidate % d == 0) {
            return false;
        }
    }
    return true;
}""", ["isPrime", "candidate", "d"]),
    "fib": ("""public static long fibonacci(int n) {
    long previous = 0;
    long current = 1;
    for (int step = 0; step < n; step++) {
        long next = previous + current;
        previous = current;
        current = next;
    }
    return previous;
}""", ["fibonacci", "n", "previous", "current", "step", "next"]),
    "sort": ("""public static void bubbleSort(int[] data) {
    boolean swapped = true;
    while (swapped) {
        swapped = false;
        for (int j = 1; j < data.length; j++) {
            if (data[j - 1] > data[j]) {
                int held = data[j];
                data[j] = data[j - 1];
                data[j - 1] = held;
                swapped = true;
            }
        }
    }
}""", ["bubbleSort", "data", "swapped", "j", "held"]),
    "lines": ("""public static List<String> readLines(String path) throws IOException {
    List<String> result = new ArrayList<>();
    BufferedReader reader = new BufferedReader(new FileReader(path));
    try {
        String row;
        while ((row = reader.readLine()) != null) {
            result.add(row);
        }
    } finally {
        reader.close();
    }
    return result;
}""", ["readLines", "path", "result", "reader", "row"]),
    "search": ("""public static int binarySearch(int[] sorted, int key) {
    int lo = 0;
    int hi = sorted.length - 1;
    while (lo <= hi) {
        int mid = (lo + hi) >>> 1;
        if (sorted[mid] < key) {
            lo = mid + 1;
        } else if (sorted[mid] > key) {
            hi = mid - 1;
        } else {
            return mid;
        }
    }
    return -1;
}""", ["binarySearch", "sorted", "key", "lo", "hi", "mid"]),
    "gcd": ("""public static int greatestCommonDivisor(int a, int b) {
    a = Math.abs(a);
    b = Math.abs(b);
    while (b != 0) {
        int remainder = a % b;
        a = b;
        b = remainder;
    }
    return a;
}""", ["greatestCommonDivisor", "a", "b", "remainder"]),
}

# Same behaviour, different shape (label 6 partners).
ALT = {
    "sum": """public static int addAll(int[] items) {
    return java.util.Arrays.stream(items).reduce(0, (x, y) -> x + y);
}
// stream based accumulation of every element in the array argument""",
    "max": """public static int largest(int[] input) {
    int[] copy = input.clone();
    java.util.Arrays.sort(copy);
    if (copy.length == 0) {
        throw new IllegalStateException("nothing to compare");
    }
    return copy[copy.length - 1];
}""",
    "reverse": """public static String backwards(String s) {
    StringBuilder sb = new StringBuilder(s);
    String out = sb.reverse().toString();
    return out; // builder handles surrogate pairs for us
}""",
    "words": """public static int tokenCount(String sentence) {
    String trimmed = sentence.trim();
    if (trimmed.isEmpty()) {
        return 0;
    }
    String[] parts = trimmed.split("\\\\s+");
    return parts.length;
}""",
    "prime": """public static boolean primality(int v) {
    if (v <= 1) return false;
    if (v <= 3) return true;
    if (v % 2 == 0 || v % 3 == 0) return false;
    int f = 5;
    while (f * f <= v) {
        if (v % f == 0 || v % (f + 2) == 0) return false;
        f += 6;
    }
    return true;
}""",
    "fib": """public static long fib(int index) {
    if (index < 2) {
        return index;
    }
    return fib(index - 1) + fib(index - 2); // exponential but fine for small inputs
}""",
    "sort": """public static void selectionSort(int[] arr) {
    for (int p = 0; p < arr.length - 1; p++) {
        int smallest = p;
        for (int q = p + 1; q < arr.length; q++) {
            if (arr[q] < arr[smallest]) smallest = q;
        }
        int t = arr[p];
        arr[p] = arr[smallest];
        arr[smallest] = t;
    }
}""",
    "lines": """public static List<String> loadAll(String file) throws IOException {
    try (java.util.stream.Stream<String> stream = java.nio.file.Files.lines(java.nio.file.Paths.get(file))) {
        return stream.collect(java.util.stream.Collectors.toList());
    }
}""",
    "search": """public static int locate(int[] arr, int target, int from, int to) {
    if (from > to) {
        return -1;
    }
    int middle = from + (to - from) / 2;
    if (arr[middle] == target) return middle;
    return arr[middle] < target ? locate(arr, target, middle + 1, to) : locate(arr, target, from, middle - 1);
}""",
    "gcd": """public static int euclid(int x, int y) {
    if (y == 0) {
        return Math.abs(x);
    }
    return euclid(y, x % y); // recursive form of the classic algorithm
}""",
}

EXTRA_STATEMENTS = [
    "long started{n} = System.nanoTime();",
    "int guard{n} = 0;",
    "System.out.println(\"checkpoint {n}\");",
    "String tag{n} = \"trace-\" + {n};",
    "boolean flag{n} = Boolean.getBoolean(\"debug\");",
    "double ratio{n} = {n} / 10.0;",
    "Object marker{n} = new Object();",
]


def rename(src, idents, rng):
    mapping = {}
    for name in idents:
        mapping[name] = name + rng.choice(["Value", "Tmp", "X", "2", "Local", "Arg"])
    for old, new in mapping.items():
        src = re.sub(r"\b%s\b" % re.escape(old), new, src)
    # literal drift
    src = re.sub(r"\b0\b", "0", src)
    src = src.replace('"empty input"', '"no data"')
    return src


def insert_statements(src, count, rng, tag):
    lines = src.split("\n")
    for n in range(count):
        slots = [i for i, l in enumerate(lines) if l.rstrip().endswith(";") and i > 0]
        at = rng.choice(slots)
        indent = re.match(r"\s*", lines[at]).group(0)
        stmt = rng.choice(EXTRA_STATEMENTS).format(n="%d%d" % (tag, n))
        lines.insert(at + 1, indent + stmt)
    return "\n".join(lines)


def reformat(src):
    # Type-1: whitespace and comments only
    out = []
    for i, line in enumerate(src.split("\n")):
        out.append(line.replace("    ", "  "))
        if i == 0:
            out.append("  // identical logic, reformatted")
    return "\n".join(out) + "\n"


def localize(src, suffix):
    # give the method a per-pair name so no two fragments share a body
    name = re.search(r"public static [\w<>\[\]]+ (\w+)\(", src).group(1)
    return re.sub(r"\b%s\b" % name, name + suffix, src)


def variant(base_key, label, rng, tag, suffix):
    src, idents = BASE[base_key]
    src = localize(src, suffix)
    idents = [i for i in idents if i != idents[0]]
    if label == 1:
        return reformat(src)
    if label == 2:
        return rename(src, idents, rng)
    if label == 3:
        return insert_statements(rename(src, idents, rng), 1, rng, tag)
    if label == 4:
        return insert_statements(rename(src, idents, rng), 3, rng, tag)
    if label == 5:
        return insert_statements(rename(src, idents, rng), 6, rng, tag)
    if label == 6:
        return "/**\n * Alternative implementation with equivalent observable behaviour.\n */\n" + localize(ALT[base_key], suffix)
    raise ValueError(label)


def embed(source):
    # hashed bag of tokens, signed, L2-normalised
    v = [0.0] * DIM
    for tok in re.findall(r"[A-Za-z_][A-Za-z0-9_]*|\d+|\S", source):
        h = hashlib.sha256(tok.encode()).digest()
        v[h[0] % DIM] += 1.0 if h[1] & 1 else -1.0
    norm = math.sqrt(sum(x * x for x in v)) or 1.0
    return [x / norm for x in v]


def write_tfem(path, records):
    out = bytearray(b"TFEM")
    out += struct.pack("<IIB", 1, DIM, 0)
    for fid, vec in records:
        raw = fid.encode("utf-8")
        body = struct.pack("<H", len(raw)) + raw + struct.pack("<%df" % DIM, *vec)
        out += body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path.write_bytes(bytes(out))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    fragments, pairs = [], []
    keys = sorted(BASE)
    counter = 0

    def add_fragment(project, source, pad=True):
        nonlocal counter
        if pad and len(source) < 200:
            source = "/**\n * Helper kept from the %s code base; behaviour documented in its tests.\n */\n" % project + source
        fid = "f%03d" % counter
        counter += 1
        fragments.append({"fragment_id": fid, "project_id": project, "source": source})
        return fid

    for p in range(20):
        project = "proj%02d" % p
        for j in range(3):
            label = (p * 3 + j) % 7
            key = keys[(p * 3 + j * 4) % len(keys)]
            suffix = "P%02d%d" % (p, j)
            left = add_fragment(project, localize(BASE[key][0], suffix))
            if label == 0:
                other = keys[(keys.index(key) + 1 + rng.randrange(len(keys) - 1)) % len(keys)]
                right_src = rename(localize(BASE[other][0], suffix), BASE[other][1][1:], rng)
            else:
                right_src = variant(key, label, rng, counter, suffix)
            right = add_fragment(project, right_src)
            pairs.append({"pair_id": "pair%03d" % len(pairs), "left": left, "right": right, "label": label})

    # edge cases for curation: short fragments, an exact duplicate, and
    # pairs spanning two projects
    short = add_fragment("proj00", "int f(int x) { return x + 1; }", pad=False)
    pairs.append({"pair_id": "pair%03d" % len(pairs), "left": short, "right": fragments[0]["fragment_id"], "label": 0})
    dup = add_fragment("proj01", fragments[6]["source"])
    pairs.append({"pair_id": "pair%03d" % len(pairs), "left": dup, "right": fragments[7]["fragment_id"], "label": 1})
    for a, b, label in [(2, 30, 0), (11, 52, 6)]:
        pairs.append({"pair_id": "pair%03d" % len(pairs), "left": fragments[a]["fragment_id"],
                      "right": fragments[b]["fragment_id"], "label": label})

    with open(out / "fragments.jsonl", "w") as fh:
        for f in fragments:
            fh.write(json.dumps(f, sort_keys=True) + "\n")
    with open(out / "pairs.jsonl", "w") as fh:
        for p in pairs:
            fh.write(json.dumps(p, sort_keys=True) + "\n")

    write_tfem(out / "embeddings.tfem", [(f["fragment_id"], embed(f["source"])) for f in fragments])

    # oracle arbiter: always answers the true label
    mock = {}
    for p in pairs:
        probs = [0.0] * 7
        probs[p["label"]] = 1.0
        mock[p["pair_id"]] = {"mode": "DeepSeek", "thought": "fixture oracle", "prediction": p["label"],
                              "confidence": 0.9, "explanation": "recorded reply", "probabilities": probs}
    (out / "mock_arbiter.json").write_text(json.dumps(mock, indent=1, sort_keys=True) + "\n")

    (out / "pipeline.ini").write_text(
        "# offline end-to-end run over the fixture corpus\n"
        "seed = 17\n"
        "tau = 0.85\n"
        "policy = all\n"
        "\n"
        "[import-embeddings]\n"
        "dim = 16\n"
        "\n"
        "[train-fusion]\n"
        "epochs = 20\n"
        "batch-size = 8\n"
        "lr = 0.003\n"
        "warmup-steps = 10\n"
        "d-k = 16\n"
        "hidden = 8\n"
    )
    print("wrote %d fragments, %d pairs to %s" % (len(fragments), len(pairs), out))


if __name__ == "__main__":
    main()
