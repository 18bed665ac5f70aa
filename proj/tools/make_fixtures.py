#!/usr/bin/env python3
"""Regenerates the offline fixtures under fixtures/.

The documents follow the NVD CVE API 2.0, NVD CVE Change History API 2.0,
Red Hat Security Data API and MITRE CWE XML schemas. Record contents are
synthetic (seeded), except CVE-2023-4863 and CVE-2023-5217 which carry their
public descriptions and vulnerable products.
"""

import datetime as dt
import json
import os
import random
import sys
from xml.sax.saxutils import escape, quoteattr

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "fixtures")
RNG = random.Random(20231018)

# --- CWE catalog -----------------------------------------------------------

CWES = {
    # id: (name, description, abstraction, languages, technologies, scopes, likelihood)
    "74": ("Improper Neutralization of Special Elements in Output Used by a Downstream Component ('Injection')",
           "The product constructs all or part of a command, data structure, or record using externally-influenced input from an upstream component, but it does not neutralize or incorrectly neutralizes special elements that could modify how it is parsed or interpreted when it is sent to a downstream component.",
           "Class", ["Not Language-Specific"], [], ["Confidentiality", "Integrity", "Availability"], "High"),
    "77": ("Improper Neutralization of Special Elements used in a Command ('Command Injection')",
           "The product constructs all or part of a command using externally-influenced input from an upstream component, but it does not neutralize or incorrectly neutralizes special elements that could modify the intended command when it is sent to a downstream component.",
           "Class", ["Not Language-Specific"], [], ["Integrity", "Confidentiality", "Availability"], "High"),
    "78": ("Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')",
           "The product constructs all or part of an OS command using externally-influenced input from an upstream component, but it does not neutralize or incorrectly neutralizes special elements that could modify the intended OS command.",
           "Base", ["Not Language-Specific"], [], ["Confidentiality", "Integrity", "Availability", "Non-Repudiation"], "High"),
    "79": ("Improper Neutralization of Input During Web Page Generation ('Cross-site Scripting')",
           "The product does not neutralize or incorrectly neutralizes user-controllable input before it is placed in output that is used as a web page that is served to other users.",
           "Base", ["Not Language-Specific"], ["Web Based"], ["Access Control", "Confidentiality", "Integrity", "Availability"], "High"),
    "89": ("Improper Neutralization of Special Elements used in an SQL Command ('SQL Injection')",
           "The product constructs all or part of an SQL command using externally-influenced input from an upstream component, but it does not neutralize or incorrectly neutralizes special elements that could modify the intended SQL command when it is sent to a downstream component.",
           "Base", ["Not Language-Specific"], ["Database Server"], ["Confidentiality", "Access Control", "Integrity"], "High"),
    "20": ("Improper Input Validation",
           "The product receives input or data, but it does not validate or incorrectly validates that the input has the properties that are required to process the data safely and correctly.",
           "Class", ["Not Language-Specific"], [], ["Availability", "Confidentiality", "Integrity"], "High"),
    "22": ("Improper Limitation of a Pathname to a Restricted Directory ('Path Traversal')",
           "The product uses external input to construct a pathname that is intended to identify a file or directory that is located underneath a restricted parent directory, but the product does not properly neutralize special elements within the pathname that can cause the pathname to resolve to a location that is outside of the restricted directory.",
           "Base", ["Not Language-Specific"], [], ["Integrity", "Confidentiality", "Availability"], "High"),
    "118": ("Incorrect Access of Indexable Resource ('Range Error')",
            "The product does not restrict or incorrectly restricts operations within the boundaries of a resource that is accessed using an index or pointer, such as memory or files.",
            "Class", [], [], ["Other"], None),
    "119": ("Improper Restriction of Operations within the Bounds of a Memory Buffer",
            "The product performs operations on a memory buffer, but it can read from or write to a memory location that is outside of the intended boundary of the buffer.",
            "Class", ["C", "C++"], [], ["Integrity", "Confidentiality", "Availability"], "High"),
    "120": ("Buffer Copy without Checking Size of Input ('Classic Buffer Overflow')",
            "The product copies an input buffer to an output buffer without verifying that the size of the input buffer is less than the size of the output buffer, leading to a buffer overflow.",
            "Base", ["C", "C++"], [], ["Integrity", "Confidentiality", "Availability"], "High"),
    "125": ("Out-of-bounds Read",
            "The product reads data past the end, or before the beginning, of the intended buffer.",
            "Base", ["C", "C++"], [], ["Confidentiality"], None),
    "787": ("Out-of-bounds Write",
            "The product writes data past the end, or before the beginning, of the intended buffer.",
            "Base", ["C", "C++", "Assembly"], ["ICS/OT"], ["Integrity", "Availability"], "High"),
    "190": ("Integer Overflow or Wraparound",
            "The product performs a calculation that can produce an integer overflow or wraparound, when the logic assumes that the resulting value will always be larger than the original value.",
            "Base", ["C", "C++"], [], ["Availability", "Integrity"], "Medium"),
    "682": ("Incorrect Calculation",
            "The product performs a calculation that generates incorrect or unintended results that are later used in security-critical decisions or resource management.",
            "Pillar", ["Not Language-Specific"], [], ["Availability", "Integrity"], "High"),
    "416": ("Use After Free",
            "Referencing memory after it has been freed can cause a program to crash, use unexpected values, or execute code.",
            "Variant", ["C", "C++"], [], ["Integrity", "Availability", "Confidentiality"], "High"),
    "825": ("Expired Pointer Dereference",
            "The product dereferences a pointer that contains a location for memory that was previously valid, but is no longer valid.",
            "Base", ["C", "C++"], [], ["Availability", "Integrity", "Confidentiality"], None),
    "476": ("NULL Pointer Dereference",
            "A NULL pointer dereference occurs when the application dereferences a pointer that it expects to be valid, but is NULL, typically causing a crash or exit.",
            "Base", ["C", "C++", "Java", "C#", "Go"], [], ["Availability", "Integrity", "Confidentiality"], "Medium"),
    "754": ("Improper Check for Unusual or Exceptional Conditions",
            "The product does not check or incorrectly checks for unusual or exceptional conditions that are not expected to occur frequently during day to day operation of the product.",
            "Class", ["Not Language-Specific"], [], ["Integrity", "Availability"], "Medium"),
    "362": ("Concurrent Execution using Shared Resource with Improper Synchronization ('Race Condition')",
            "The product contains a code sequence that can run concurrently with other code, and the code sequence requires temporary, exclusive access to a shared resource, but a timing window exists in which the shared resource can be modified by another code sequence that is operating concurrently.",
            "Class", ["C", "C++", "Java"], ["Mobile"], ["Availability", "Confidentiality", "Integrity", "Access Control"], "Medium"),
    "352": ("Cross-Site Request Forgery (CSRF)",
            "The web application does not, or can not, sufficiently verify whether a well-formed, valid, consistent request was intentionally provided by the user who submitted the request.",
            "Compound", ["Not Language-Specific"], ["Web Based"], ["Confidentiality", "Integrity", "Availability", "Non-Repudiation", "Access Control"], "Medium"),
    "345": ("Insufficient Verification of Data Authenticity",
            "The product does not sufficiently verify the origin or authenticity of data, in a way that causes it to accept invalid data.",
            "Class", [], [], ["Integrity", "Other"], None),
    "200": ("Exposure of Sensitive Information to an Unauthorized Actor",
            "The product exposes sensitive information to an actor that is not explicitly authorized to have access to that information.",
            "Class", ["Not Language-Specific"], ["Mobile"], ["Confidentiality"], "High"),
    "668": ("Exposure of Resource to Wrong Sphere",
            "The product exposes a resource to the wrong control sphere, providing unintended actors with inappropriate access to the resource.",
            "Class", [], [], ["Confidentiality", "Integrity", "Other"], None),
    "400": ("Uncontrolled Resource Consumption",
            "The product does not properly control the allocation and maintenance of a limited resource, thereby enabling an actor to influence the amount of resources consumed, eventually leading to the exhaustion of available resources.",
            "Class", ["Not Language-Specific"], [], ["Availability"], "High"),
    "664": ("Improper Control of a Resource Through its Lifetime",
            "The product does not maintain or incorrectly maintains control over a resource throughout its lifetime of creation, use, and release.",
            "Pillar", [], [], ["Other"], None),
    "287": ("Improper Authentication",
            "When an actor claims to have a given identity, the product does not prove or insufficiently proves that the claim is correct.",
            "Class", ["Not Language-Specific"], ["Cloud Computing", "Web Based"], ["Integrity", "Confidentiality", "Availability", "Access Control"], "High"),
    "284": ("Improper Access Control",
            "The product does not restrict or incorrectly restricts access to a resource from an unauthorized actor.",
            "Pillar", ["Not Language-Specific"], ["ICS/OT"], ["Other"], "High"),
    "862": ("Missing Authorization",
            "The product does not perform an authorization check when an actor attempts to access a resource or perform an action.",
            "Class", ["Not Language-Specific"], ["Web Based"], ["Confidentiality", "Integrity", "Availability"], "High"),
    "285": ("Improper Authorization",
            "The product does not perform or incorrectly performs an authorization check when an actor attempts to access a resource or perform an action.",
            "Class", ["Not Language-Specific"], ["Web Based"], ["Confidentiality", "Integrity", "Access Control"], "High"),
    "434": ("Unrestricted Upload of File with Dangerous Type",
            "The product allows the upload or transfer of dangerous file types that are automatically processed within its environment.",
            "Base", ["ASP.NET", "PHP"], ["Web Server"], ["Integrity", "Confidentiality", "Availability"], "Medium"),
    "669": ("Incorrect Resource Transfer Between Spheres",
            "The product does not properly transfer a resource/behavior to another sphere, or improperly imports a resource/behavior from another sphere, in a manner that provides unintended control over that resource.",
            "Class", [], [], ["Other"], None),
    "502": ("Deserialization of Untrusted Data",
            "The product deserializes untrusted data without sufficiently verifying that the resulting data will be valid.",
            "Base", ["Java", "Ruby", "PHP", "Python", "JavaScript"], ["ICS/OT"], ["Integrity", "Availability", "Other"], "Medium"),
    "913": ("Improper Control of Dynamically-Managed Code Resources",
            "The product does not properly restrict reading from or writing to dynamically-managed code resources such as variables, objects, classes, attributes, functions, or executable instructions or statements.",
            "Class", [], [], ["Integrity", "Other"], None),
    "611": ("Improper Restriction of XML External Entity Reference",
            "The product processes an XML document that can contain XML entities with URIs that resolve to documents outside of the intended sphere of control, causing the product to embed incorrect documents into its output.",
            "Base", ["XML"], ["Web Based"], ["Confidentiality", "Integrity", "Availability"], "High"),
    "610": ("Externally Controlled Reference to a Resource in Another Sphere",
            "The product uses an externally controlled name or reference that resolves to a resource that is outside of the intended control sphere.",
            "Class", [], [], ["Confidentiality", "Integrity"], None),
    "918": ("Server-Side Request Forgery (SSRF)",
            "The web server receives a URL or similar request from an upstream component and retrieves the contents of this URL, but it does not sufficiently ensure that the request is being sent to the expected destination.",
            "Base", ["Not Language-Specific"], ["Web Server"], ["Confidentiality", "Integrity"], None),
    "441": ("Unintended Proxy or Intermediary ('Confused Deputy')",
            "The product receives a request, message, or directive from an upstream component, but the product does not sufficiently preserve the original source of the request before forwarding the request to an external actor that is outside of the product's control sphere.",
            "Class", [], [], ["Non-Repudiation", "Access Control"], None),
    "770": ("Allocation of Resources Without Limits or Throttling",
            "The product allocates a reusable resource or group of resources on behalf of an actor without imposing any restrictions on the size or number of resources that can be allocated.",
            "Base", ["Not Language-Specific"], [], ["Availability"], "High"),
    # deliberately bare: no relations, platforms, consequences or likelihood
    "1021": ("Improper Restriction of Rendered UI Layers or Frames",
             "The web application does not restrict or incorrectly restricts frame objects or UI layers that belong to another application or domain.",
             "Base", [], [], [], None),
}

RELATIONS = [
    ("79", "ChildOf", "74"), ("77", "ChildOf", "74"), ("78", "ChildOf", "77"), ("89", "ChildOf", "74"),
    ("20", "CanPrecede", "22"), ("20", "CanPrecede", "74"), ("119", "ChildOf", "118"), ("120", "ChildOf", "119"),
    ("125", "ChildOf", "119"), ("787", "ChildOf", "119"), ("190", "ChildOf", "682"), ("190", "CanPrecede", "119"),
    ("416", "ChildOf", "825"), ("476", "ChildOf", "754"), ("352", "ChildOf", "345"), ("200", "ChildOf", "668"),
    ("400", "ChildOf", "664"), ("287", "ChildOf", "284"), ("862", "ChildOf", "285"), ("285", "ChildOf", "284"),
    ("434", "ChildOf", "669"), ("502", "ChildOf", "913"), ("611", "ChildOf", "610"), ("918", "ChildOf", "441"),
    ("770", "ChildOf", "400"), ("770", "ChildOf", "665"),  # 665 absent: dropped at parse time
    ("120", "PeerOf", "787"), ("362", "CanPrecede", "416"), ("125", "PeerOf", "120"), ("22", "ChildOf", "668"),
    ("352", "PeerOf", "346"),  # 346 absent: dropped
]
CATEGORIES = {
    "1347": ("OWASP Top Ten 2021 Category A03:2021 - Injection",
             "Weaknesses in this category are related to the A03 category Injection of the OWASP Top Ten 2021.",
             ["79", "89", "77", "78", "74", "20"]),
    "1345": ("OWASP Top Ten 2021 Category A01:2021 - Broken Access Control",
             "Weaknesses in this category are related to the A01 category Broken Access Control of the OWASP Top Ten 2021.",
             ["22", "200", "352", "862", "285", "284"]),
    "1218": ("Memory Buffer Errors",
             "Weaknesses in this category are related to the handling of memory buffers within a software system.",
             ["119", "120", "125", "787"]),
}


def write_cwe_catalog(path):
    rels = {}
    for child, nature, parent in RELATIONS:
        rels.setdefault(child, []).append((nature, parent))
    out = ['<?xml version="1.0" encoding="UTF-8"?>',
           '<Weakness_Catalog xmlns="http://cwe.mitre.org/cwe-7" Name="CWE" Version="4.13" Date="2023-10-26">',
           "   <Weaknesses>"]
    for cid in sorted(CWES, key=int):
        name, desc, abstraction, langs, techs, scopes, lik = CWES[cid]
        out.append(f'      <Weakness ID="{cid}" Name={quoteattr(name)} Abstraction="{abstraction}" Structure="Simple" Status="Stable">')
        out.append(f"         <Description>{escape(desc)}</Description>")
        if cid in rels:
            out.append("         <Related_Weaknesses>")
            for nature, parent in rels[cid]:
                out.append(f'            <Related_Weakness Nature="{nature}" CWE_ID="{parent}" View_ID="1000" Ordinal="Primary"/>')
            out.append("         </Related_Weaknesses>")
        if langs or techs:
            out.append("         <Applicable_Platforms>")
            for lang in langs:
                attr = "Class" if lang == "Not Language-Specific" else "Name"
                out.append(f'            <Language {attr}={quoteattr(lang)} Prevalence="Often"/>')
            for tech in techs:
                out.append(f'            <Technology Class={quoteattr(tech)} Prevalence="Undetermined"/>')
            out.append("         </Applicable_Platforms>")
        if scopes:
            out.append("         <Common_Consequences>")
            out.append("            <Consequence>")
            for s in scopes:
                out.append(f"               <Scope>{escape(s)}</Scope>")
            out.append("               <Impact>Varies by Context</Impact>")
            out.append("            </Consequence>")
            out.append("         </Common_Consequences>")
        if lik:
            out.append(f"         <Likelihood_Of_Exploit>{lik}</Likelihood_Of_Exploit>")
        out.append("      </Weakness>")
    out.append("   </Weaknesses>")
    out.append("   <Categories>")
    for cid, (name, summary, members) in sorted(CATEGORIES.items()):
        out.append(f'      <Category ID="{cid}" Name={quoteattr(name)} Status="Incomplete">')
        out.append(f"         <Summary>{escape(summary)}</Summary>")
        out.append("         <Relationships>")
        for m in members:
            out.append(f'            <Has_Member CWE_ID="{m}" View_ID="1344"/>')
        out.append("         </Relationships>")
        out.append("      </Category>")
    out.append("   </Categories>")
    out.append("</Weakness_Catalog>")
    with open(path, "w") as f:
        f.write("\n".join(out) + "\n")


# --- NVD ----------------------------------------------------------------------

CLUSTERS = {
    "browser": {
        "cpes": [("a", "google", "chrome"), ("a", "mozilla", "firefox"), ("a", "mozilla", "firefox_esr"),
                 ("a", "microsoft", "edge_chromium"), ("a", "mozilla", "thunderbird"), ("a", "apple", "safari")],
        "cwes": ["787", "416", "125", "20", "362"],
        "phrases": ["in the rendering engine", "in the JavaScript engine", "in WebGL", "in the media stack"],
        "impacts": ["allowed a remote attacker to execute arbitrary code via a crafted HTML page",
                    "allowed a remote attacker to potentially exploit heap corruption via a crafted HTML page"],
    },
    "imaging": {
        "cpes": [("a", "webmproject", "libwebp"), ("a", "imagemagick", "imagemagick"), ("a", "libtiff", "libtiff"),
                 ("a", "ffmpeg", "ffmpeg"), ("a", "python", "pillow"), ("a", "webmproject", "libvpx"), ("a", "qt", "qt")],
        "cwes": ["787", "125", "190", "120", "400"],
        "phrases": ["when decoding a crafted image", "in the lossless decoder", "when parsing a malformed file",
                    "in the frame scaler"],
        "impacts": ["may lead to a denial of service or arbitrary code execution",
                    "allows attackers to cause a crash via a crafted file"],
    },
    "web": {
        "cpes": [("a", "wordpress", "wordpress"), ("a", "drupal", "drupal"), ("a", "phpmyadmin", "phpmyadmin"),
                 ("a", "jenkins", "jenkins"), ("a", "gitlab", "gitlab"), ("a", "apache", "struts")],
        "cwes": ["79", "89", "352", "22", "862", "918", "434"],
        "phrases": ["in the admin panel", "via the search parameter", "in the file upload handler", "in the REST API"],
        "impacts": ["allows remote attackers to inject arbitrary web script",
                    "allows authenticated users to read arbitrary files"],
    },
    "os": {
        "cpes": [("o", "linux", "linux_kernel"), ("o", "microsoft", "windows_10"), ("o", "apple", "iphone_os"),
                 ("o", "apple", "macos"), ("o", "canonical", "ubuntu_linux"), ("o", "redhat", "enterprise_linux")],
        "cwes": ["416", "476", "362", "200", "787", "287"],
        "phrases": ["in the kernel networking stack", "in the file system driver", "in the authentication service",
                    "in the graphics component"],
        "impacts": ["allows a local user to escalate privileges", "could allow a local attacker to cause a denial of service"],
    },
    "server": {
        "cpes": [("a", "apache", "http_server"), ("a", "haxx", "curl"), ("a", "openssl", "openssl"),
                 ("a", "nginx", "nginx"), ("a", "isc", "bind"), ("a", "oracle", "mysql")],
        "cwes": ["400", "770", "20", "125", "287", "502", "611"],
        "phrases": ["when handling HTTP/2 requests", "in the TLS handshake", "when processing malformed headers",
                    "in the XML configuration loader"],
        "impacts": ["allows a remote attacker to cause resource exhaustion", "allows remote attackers to bypass authentication"],
    },
}
DISTROS = [("o", "debian", "debian_linux"), ("o", "fedoraproject", "fedora")]
WEAKNESS_TEXT = {
    "787": "out-of-bounds write", "416": "use after free", "125": "out-of-bounds read", "20": "improper input validation",
    "362": "race condition", "190": "integer overflow", "120": "buffer overflow", "400": "uncontrolled resource consumption",
    "79": "cross-site scripting", "89": "SQL injection", "352": "cross-site request forgery", "22": "path traversal",
    "862": "missing authorization", "918": "server-side request forgery", "434": "unrestricted file upload",
    "476": "NULL pointer dereference", "200": "information disclosure", "287": "improper authentication",
    "770": "allocation without limits", "502": "deserialization of untrusted data", "611": "XML external entity injection",
}


def iso(t):
    return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}"


def cpe23(part, vendor, product, version="*"):
    return f"cpe:2.3:{part}:{vendor}:{product}:{version}:*:*:*:*:*:*:*"


def nvd_item(cve_id, desc, cwes, cpes, published, modified):
    weaknesses = []
    if cwes:
        weaknesses.append({"source": "nvd@nist.gov", "type": "Primary",
                           "description": [{"lang": "en", "value": c} for c in cwes]})
    configs = []
    if cpes:
        configs.append({"nodes": [{"operator": "OR", "negate": False,
                                   "cpeMatch": [{"vulnerable": True, "criteria": c,
                                                 "matchCriteriaId": f"{RNG.getrandbits(64):016X}"} for c in cpes]}]})
    return {"cve": {"id": cve_id, "sourceIdentifier": "cve@mitre.org", "published": iso(published),
                    "lastModified": iso(modified), "vulnStatus": "Analyzed",
                    "descriptions": [{"lang": "en", "value": desc}, {"lang": "es", "value": "(es) " + desc}],
                    "metrics": {}, "weaknesses": weaknesses, "configurations": configs, "references": []}}


def change(cve_id, event, created, added_cpes):
    value = "Configuration 1\n     OR\n" + "".join(f"          *{c}\n" for c in added_cpes)
    return {"change": {"cveId": cve_id, "eventName": event, "cveChangeId": f"{RNG.getrandbits(64):016X}",
                       "sourceIdentifier": "nvd@nist.gov", "created": iso(created),
                       "details": [{"action": "Added", "type": "CPE Configuration", "newValue": value}]}}


def real_cases():
    items, history = [], []
    pub = dt.datetime(2023, 9, 12, 15, 15, 24, 327000)
    cpes = [cpe23("a", "google", "chrome"), cpe23("o", "debian", "debian_linux", "11.0"),
            cpe23("o", "debian", "debian_linux", "12.0"), cpe23("o", "fedoraproject", "fedora", "37"),
            cpe23("a", "mozilla", "firefox"), cpe23("a", "mozilla", "firefox_esr"), cpe23("a", "mozilla", "thunderbird"),
            cpe23("a", "microsoft", "edge")]
    desc = ("Heap buffer overflow in libwebp in Google Chrome prior to 116.0.5845.187 and libwebp 1.3.2 allowed a "
            "remote attacker to perform an out of bounds memory write via a crafted HTML page. "
            "(Chromium security severity: Critical)")
    items.append(nvd_item("CVE-2023-4863", desc, ["CWE-787"], cpes, pub, dt.datetime(2023, 10, 16, 8, 0, 0)))
    history.append(change("CVE-2023-4863", "Initial Analysis", pub + dt.timedelta(days=2), cpes[:1]))
    history.append(change("CVE-2023-4863", "Reanalysis", pub + dt.timedelta(days=8), cpes[1:4]))
    history.append(change("CVE-2023-4863", "CVE Modified", pub + dt.timedelta(days=31), cpes[4:]))

    pub = dt.datetime(2023, 9, 28, 16, 15, 10, 0)
    names = [("a", "webmproject", "libvpx"), ("a", "google", "chrome"), ("a", "mozilla", "firefox"),
             ("a", "mozilla", "firefox_esr"), ("a", "mozilla", "firefox_focus"), ("a", "mozilla", "thunderbird"),
             ("a", "microsoft", "edge"), ("o", "fedoraproject", "fedora"), ("o", "debian", "debian_linux"),
             ("o", "apple", "ipad_os"), ("o", "apple", "iphone_os")]
    cpes = [cpe23(*n) for n in names]
    desc = ("Heap buffer overflow in vp8 encoding in libvpx in Google Chrome prior to 117.0.5938.132 and libvpx 1.13.1 "
            "allowed a remote attacker to potentially exploit heap corruption via a crafted HTML page. "
            "(Chromium security severity: High)")
    items.append(nvd_item("CVE-2023-5217", desc, ["CWE-787"], cpes, pub, dt.datetime(2023, 10, 10, 9, 0, 0)))
    history.append(change("CVE-2023-5217", "Initial Analysis", pub + dt.timedelta(days=1), cpes[:2]))
    history.append(change("CVE-2023-5217", "Reanalysis", pub + dt.timedelta(days=9), cpes[2:]))
    return items, history


def synth_nvd(count):
    items, history = real_cases()
    seq = {}
    while len(items) < count:
        year = RNG.choice([2019, 2020, 2021, 2022, 2023])
        published = dt.datetime(year, 1, 1) + dt.timedelta(days=RNG.randrange(365 if year < 2023 else 290),
                                                            seconds=RNG.randrange(86400))
        seq[year] = seq.get(year, 1000) + RNG.randrange(1, 40)
        cve_id = f"CVE-{year}-{seq[year]}"
        cname = RNG.choice(sorted(CLUSTERS))
        cl = CLUSTERS[cname]
        roll = RNG.random()
        n_cpe = 0 if roll < 0.06 else RNG.choice([1, 1, 2, 2, 3, 4])
        products = RNG.sample(cl["cpes"], min(n_cpe, len(cl["cpes"])))
        if n_cpe and RNG.random() < 0.35:
            products.append(RNG.choice(DISTROS))
        cpes = [cpe23(p, v, pr, RNG.choice(["*", "1.0", "2.3.1", "12.0"])) for p, v, pr in products]
        if len(cpes) >= 2 and RNG.random() < 0.2:
            cpes.append(cpes[0])  # duplicate listing, deduplicated by the parser
        has_cwe = RNG.random() > 0.25 if n_cpe else RNG.random() < 0.3
        cwes = [f"CWE-{RNG.choice(cl['cwes'])}"] if has_cwe else []
        if has_cwe and RNG.random() < 0.1:
            cwes.append(f"CWE-{RNG.choice(cl['cwes'])}")
        if not has_cwe and RNG.random() < 0.5:
            cwes = [RNG.choice(["NVD-CWE-Other", "NVD-CWE-noinfo"])]
        main = products[0][2].replace("_", " ") if products else "the affected product"
        weak = WEAKNESS_TEXT.get(cwes[0][4:], "a security issue") if cwes and cwes[0].startswith("CWE-") else "a flaw"
        desc = f"A {weak} vulnerability {RNG.choice(cl['phrases'])} of {main} {RNG.choice(cl['impacts'])}."
        modified = published + dt.timedelta(days=RNG.randrange(1, 600))
        items.append(nvd_item(cve_id, desc, cwes, cpes, published, modified))
        if cpes and RNG.random() < 0.6:
            unique = list(dict.fromkeys(cpes))
            first = unique[: max(1, len(unique) - RNG.choice([0, 0, 1]))]
            history.append(change(cve_id, "Initial Analysis", published + dt.timedelta(hours=RNG.randrange(1, 96)), first))
            rest = unique[len(first):]
            if rest:
                delay = RNG.choice([3, 10, 45, 200, 400])
                history.append(change(cve_id, "Reanalysis", published + dt.timedelta(days=delay), rest))
    return items, history


def write_pages(directory, key, items, page_size, extra=None):
    os.makedirs(directory, exist_ok=True)
    names = []
    for i in range(0, len(items), page_size):
        name = f"page-{i // page_size + 1:05d}.json"
        page = {"resultsPerPage": page_size, "startIndex": i, "totalResults": len(items), "format": "NVD_CVE",
                "version": "2.0", "timestamp": "2023-10-18T00:00:00.000", key: items[i:i + page_size]}
        if extra:
            page.update(extra)
        with open(os.path.join(directory, name), "w") as f:
            json.dump(page, f, indent=1, sort_keys=True)
            f.write("\n")
        names.append(name)
    with open(os.path.join(directory, "manifest"), "w") as f:
        f.write("# page files in fetch order\n" + "\n".join(names) + "\n")


# --- Red Hat ------------------------------------------------------------------

RH_PRODUCTS = [("Red Hat Enterprise Linux 8", "cpe:/a:redhat:enterprise_linux:8::appstream"),
               ("Red Hat Enterprise Linux 9", "cpe:/a:redhat:enterprise_linux:9::appstream"),
               ("Red Hat Enterprise Linux 7", "cpe:/o:redhat:enterprise_linux:7::server"),
               ("Red Hat OpenShift Container Platform 4", "cpe:/a:redhat:openshift:4"),
               ("Red Hat JBoss Enterprise Application Platform 7", "cpe:/a:redhat:jboss_enterprise_application_platform:7"),
               ("Red Hat Satellite 6", "cpe:/a:redhat:satellite:6")]


def synth_redhat(nvd_items, count):
    docs = []
    picks = RNG.sample(nvd_items, count)
    for item in picks:
        cve = item["cve"]
        pub = dt.datetime.strptime(cve["published"][:10], "%Y-%m-%d")
        cwes = [d["value"] for w in cve["weaknesses"] for d in w["description"] if d["value"].startswith("CWE-")]
        if cwes and RNG.random() < 0.4:
            # Red Hat often records a different, more general weakness
            parent = {"CWE-787": "CWE-119", "CWE-125": "CWE-119", "CWE-120": "CWE-119", "CWE-79": "CWE-74"}.get(cwes[0])
            cwes = [parent] if parent else cwes
        cwe_field = None if RNG.random() < 0.35 else ("->".join(cwes) if cwes else None)
        releases, states = [], []
        for name, cpe in RNG.sample(RH_PRODUCTS, RNG.choice([0, 1, 1, 2, 3])):
            rd = pub + dt.timedelta(days=RNG.randrange(0, 120))
            releases.append({"product_name": name, "release_date": rd.strftime("%Y-%m-%dT00:00:00Z"),
                             "advisory": f"RHSA-{rd.year}:{RNG.randrange(1000, 9999)}", "cpe": cpe,
                             "package": "pkg-0:1.0-1.el8"})
        for name, cpe in RNG.sample(RH_PRODUCTS, RNG.choice([0, 1])):
            states.append({"product_name": name, "fix_state": RNG.choice(["Affected", "Will not fix", "Not affected"]),
                           "package_name": "pkg", "cpe": cpe})
        doc = {"name": cve["id"], "threat_severity": RNG.choice(["Low", "Moderate", "Important"]),
               "public_date": pub.strftime("%Y-%m-%dT00:00:00Z"),
               "bugzilla": {"description": cve["descriptions"][0]["value"][:80], "id": str(RNG.randrange(2000000, 2300000))},
               "details": [cve["descriptions"][0]["value"]], "affected_release": releases, "package_state": states}
        if cwe_field:
            doc["cwe"] = cwe_field
        docs.append(doc)
    return docs


def main():
    os.makedirs(ROOT, exist_ok=True)
    write_cwe_catalog(os.path.join(ROOT, "cwe.xml"))
    items, history = synth_nvd(500)
    write_pages(os.path.join(ROOT, "nvd_small"), "vulnerabilities", items, 100)
    history.sort(key=lambda c: c["change"]["created"])
    write_pages(os.path.join(ROOT, "nvd_small", "history"), "cveChanges", history, 200)
    rh = synth_redhat(items, 80)
    rh_dir = os.path.join(ROOT, "redhat_small")
    os.makedirs(rh_dir, exist_ok=True)
    names = []
    for i in range(0, len(rh), 40):
        name = f"page-{i // 40 + 1:05d}.json"
        with open(os.path.join(rh_dir, name), "w") as f:
            json.dump(rh[i:i + 40], f, indent=1, sort_keys=True)
            f.write("\n")
        names.append(name)
    with open(os.path.join(rh_dir, "manifest"), "w") as f:
        f.write("\n".join(names) + "\n")
    print(f"nvd={len(items)} history={len(history)} redhat={len(rh)} cwe={len(CWES)}+{len(CATEGORIES)}", file=sys.stderr)


if __name__ == "__main__":
    main()
